//! The `sgctr` binary: files, manifests, determinism and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgctr_core::data::parse_csv;
use sgctr_core::model::{load_checkpoint, ModelConfig, ModelParams};
use sgctr_core::schema::FeatureSchema;
use sgctr_core::train::{heldout_loss, TrainConfig, HELDOUT_STREAM};

fn sgctr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgctr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sgctr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["synth", "--out", &f.path("data"), "--n-train", "600", "--n-test", "300", "--seed", "4"]);
        f
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn path(&self, rel: &str) -> String {
        s(&self.p(rel))
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let mut args = vec![
            "train".to_string(),
            "--schema".into(),
            self.path("data/schema.txt"),
            "--train".into(),
            self.path("data/train.csv"),
            "--heldout".into(),
            self.path("data/test.csv"),
            "--out".into(),
            self.path(out),
            "--dim".into(),
            "8".into(),
            "--epochs".into(),
            "1".into(),
            "--batch-size".into(),
            "64".into(),
            "--log-every".into(),
            "0".into(),
        ];
        args.extend(extra.iter().map(|x| x.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
    }

    fn eval_args(&self, out: &str, extra: &[&str]) -> Vec<String> {
        let mut args = vec![
            "eval".to_string(),
            "--schema".into(),
            self.path("data/schema.txt"),
            "--checkpoint".into(),
            self.path("m/checkpoint"),
            "--data".into(),
            self.path("data/test.csv"),
            "--out".into(),
            self.path(out),
        ];
        args.extend(extra.iter().map(|x| x.to_string()));
        args
    }

    fn schema(&self) -> FeatureSchema {
        FeatureSchema::parse(&fs::read_to_string(self.p("data/schema.txt")).unwrap()).unwrap()
    }
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    sgctr(&refs)
}

fn report_metrics(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "mode,dataset,n,auc,logloss,auc_corrupted,seed");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    row[2..].join(",")
}

#[test]
fn synth_writes_all_files_with_requested_rows() {
    let f = Fixture::new();
    for name in ["schema.txt", "train.csv", "test.csv", "test_corrupted.csv", "oracle.txt", "manifest.txt"] {
        assert!(f.p("data").join(name).exists(), "{name}");
    }
    let schema = f.schema();
    let train = parse_csv(fs::File::open(f.p("data/train.csv")).unwrap(), &schema).unwrap();
    let test = parse_csv(fs::File::open(f.p("data/test.csv")).unwrap(), &schema).unwrap();
    assert_eq!((train.len(), test.len()), (600, 300));
    let manifest = fs::read_to_string(f.p("data/manifest.txt")).unwrap();
    assert!(manifest.starts_with("# sgctr synth\n"));
    assert!(manifest.contains("n-train = 600\n"));
    assert!(manifest.contains("corruption-rate = 0.3\n"));
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let f = Fixture::new();
    ok(&["synth", "--out", &f.path("again"), "--n-train", "600", "--n-test", "300", "--seed", "4"]);
    for name in ["schema.txt", "train.csv", "test.csv", "test_corrupted.csv", "oracle.txt"] {
        assert_eq!(fs::read(f.p("data").join(name)).unwrap(), fs::read(f.p("again").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn zero_corruption_copies_the_test_set() {
    let f = Fixture::new();
    ok(&["synth", "--out", &f.path("clean"), "--n-train", "10", "--n-test", "50", "--corruption-rate", "0"]);
    assert_eq!(fs::read(f.p("clean/test.csv")).unwrap(), fs::read(f.p("clean/test_corrupted.csv")).unwrap());
}

#[test]
fn config_file_entries_yield_to_flags() {
    let f = Fixture::new();
    fs::write(f.p("c.txt"), "# small run\nn_train = 20\nn-test = 30\nseed = 9\n").unwrap();
    ok(&["synth", "--config", &f.path("c.txt"), "--out", &f.path("cfg"), "--n-test", "12"]);
    let manifest = fs::read_to_string(f.p("cfg/manifest.txt")).unwrap();
    assert!(manifest.contains("n-train = 20\n"));
    assert!(manifest.contains("n-test = 12\n"));
    assert!(manifest.contains("seed = 9\n"));
    fs::write(f.p("bad.txt"), "no_such_key = 1\n").unwrap();
    let out = sgctr(&["synth", "--config", &f.path("bad.txt"), "--out", &f.path("x")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn checkpoint_reproduces_heldout_loss() {
    let f = Fixture::new();
    f.train("m", &["--alpha", "2.5"]);
    let summary = fs::read_to_string(f.p("m/summary.txt")).unwrap();
    let reported: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("heldout_loss="))
        .unwrap()
        .parse()
        .unwrap();
    let schema = f.schema();
    let (params, _) = load_checkpoint(&f.p("m/checkpoint"), &schema).unwrap();
    let heldout = parse_csv(fs::File::open(f.p("data/test.csv")).unwrap(), &schema).unwrap();
    let cfg = TrainConfig {
        model: params.config,
        batch_size: 64,
        alpha: 2.5,
        ..TrainConfig::default()
    };
    let again = heldout_loss(&heldout.samples, &params, &schema, &cfg, cfg.seed ^ HELDOUT_STREAM).unwrap();
    assert!((again - reported).abs() < 1e-9, "{again} vs {reported}");
    let loss = fs::read_to_string(f.p("m/loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss,mask_ratio\n"));
    assert_eq!(loss.lines().count(), 1 + 600 / 64 + 1);
}

#[test]
fn bert_mode_is_recorded() {
    let f = Fixture::new();
    f.train("bert", &["--mask-mode", "bert:0.15"]);
    let manifest = fs::read_to_string(f.p("bert/manifest.txt")).unwrap();
    assert!(manifest.contains("mask-mode = bert:0.15\n"));
}

#[test]
fn zero_epochs_store_the_initialization() {
    let f = Fixture::new();
    f.train("init", &["--epochs", "0", "--seed", "13"]);
    let schema = f.schema();
    let (loaded, meta) = load_checkpoint(&f.p("init/checkpoint"), &schema).unwrap();
    let mut init = ModelParams::init(&schema, ModelConfig::with_dim(8), 13).unwrap();
    init.round_to_f32();
    assert_eq!(meta.config, ModelConfig::with_dim(8));
    assert_eq!(loaded, init);
}

#[test]
fn eval_modes_and_schedule_errors() {
    let f = Fixture::new();
    f.train("m", &[]);
    assert!(run(&f.eval_args("one", &["--mode", "onestep"])).status.success());
    assert!(run(&f.eval_args("sg1", &["--mode", "sgctr", "--steps", "1", "--schedule", "square"])).status.success());
    assert_eq!(report_metrics(&f.p("one/report.csv")), report_metrics(&f.p("sg1/report.csv")));

    assert!(run(&f.eval_args("disc", &["--mode", "disc"])).status.success());
    let disc = fs::read_to_string(f.p("disc/report.csv")).unwrap();
    assert!(disc.lines().nth(1).unwrap().starts_with("disc,test,300,"));

    let out = run(&f.eval_args("bad", &["--schedule", "zigzag"]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for k in ["exponential", "square", "cosine", "linear", "logarithmic"] {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn eval_reports_the_corrupted_subset_and_traces() {
    let f = Fixture::new();
    f.train("m", &[]);
    let mut args = f.eval_args("c", &["--clean", &f.path("data/test.csv"), "--trace", "--threads", "2"]);
    args[6] = f.path("data/test_corrupted.csv");
    assert!(run(&args).status.success());
    let report = fs::read_to_string(f.p("c/report.csv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "sgctr:5:cosine");
    assert_eq!(row[1], "test_corrupted");
    assert!(row[5].parse::<f64>().is_ok(), "{report}");
    let trace = fs::read_to_string(f.p("c/trace.csv")).unwrap();
    assert!(trace.starts_with("sample,step,l_t,masked,confidences\n"));
    assert_eq!(trace.lines().count(), 1 + 300 * 5);

    // Threads and the key/value cache do not change the numbers.
    let plain = run(&f.eval_args("p", &[]));
    assert!(plain.status.success());
    let fast = run(&f.eval_args("q", &["--threads", "3", "--cache"]));
    assert!(fast.status.success());
    assert_eq!(fs::read(f.p("p/report.csv")).unwrap(), fs::read(f.p("q/report.csv")).unwrap());
}

#[test]
fn checkpoint_from_another_schema_is_refused() {
    let f = Fixture::new();
    f.train("m", &[]);
    ok(&["synth", "--out", &f.path("other"), "--n-train", "10", "--n-test", "10", "--buckets", "30"]);
    let mut args = f.eval_args("x", &[]);
    args[2] = f.path("other/schema.txt");
    args[6] = f.path("other/test.csv");
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let a = format!("{:016x}", f.schema().hash());
    assert!(err.contains(&a), "{err}");
}

#[test]
fn sweeps_write_one_row_per_setting() {
    let f = Fixture::new();
    f.train("m", &[]);
    let mut args = f.eval_args("s1", &["--axis", "schedule"]);
    args[0] = "sweep".into();
    assert!(run(&args).status.success());
    let text = fs::read_to_string(f.p("s1/sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "config,auc,logloss");
    let configs: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(configs, ["exponential", "square", "cosine", "linear", "logarithmic"]);

    let mut args = f.eval_args("s2", &["--axis", "steps", "--steps-list", "1,3,5,8,12"]);
    args[0] = "sweep".into();
    assert!(run(&args).status.success());
    let text = fs::read_to_string(f.p("s2/sweep.csv")).unwrap();
    let configs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(configs, ["T=1", "T=3", "T=5", "T=8", "T=12"]);

    // The cosine row equals a standalone evaluation.
    assert!(run(&f.eval_args("e", &["--schedule", "cosine"])).status.success());
    let sweep_row = fs::read_to_string(f.p("s1/sweep.csv")).unwrap().lines().nth(3).unwrap().to_string();
    let eval_row = fs::read_to_string(f.p("e/report.csv")).unwrap().lines().nth(1).unwrap().to_string();
    let e: Vec<&str> = eval_row.split(',').collect();
    assert_eq!(sweep_row, format!("cosine,{},{}", e[3], e[4]));
}

#[test]
fn error_exit_codes() {
    let f = Fixture::new();
    // missing data file
    let out = sgctr(&["train", "--schema", &f.path("data/schema.txt"), "--train", &f.path("nope.csv"), "--out", &f.path("m")]);
    assert_eq!(out.status.code(), Some(3));
    // header naming a column the schema does not have
    let text = fs::read_to_string(f.p("data/train.csv")).unwrap().replacen("item1", "item9", 1);
    fs::write(f.p("renamed.csv"), text).unwrap();
    let out = sgctr(&["train", "--schema", &f.path("data/schema.txt"), "--train", &f.path("renamed.csv"), "--out", &f.path("m")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("item9"));
    // output below a regular file
    fs::write(f.p("file"), "x").unwrap();
    let out = sgctr(&["synth", "--out", &f.path("file/sub"), "--n-train", "5", "--n-test", "5"]);
    assert_eq!(out.status.code(), Some(3));
    // missing required flag
    assert_eq!(sgctr(&["eval"]).status.code(), Some(2));
    // invalid value
    assert_eq!(sgctr(&["synth", "--out", &f.path("y"), "--purity", "1.5"]).status.code(), Some(2));
}

#[test]
fn criteo_files_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |r: &str| s(&dir.path().join(r));
    fs::write(dir.path().join("schema.txt"), FeatureSchema::criteo(64, 1000).unwrap().to_text()).unwrap();
    let mut lines = String::new();
    for i in 0..80u32 {
        let mut cols = vec![(i % 2).to_string()];
        cols.extend((0..13).map(|j| if (i + j) % 7 == 0 { String::new() } else { ((i * 3 + j) % 50).to_string() }));
        cols.extend((0..26).map(|j| format!("{:08x}", (i * 31 + j * 17) % 23)));
        lines.push_str(&cols.join("\t"));
        lines.push('\n');
    }
    lines.push_str("1\tbroken\n");
    fs::write(dir.path().join("day.tsv"), lines).unwrap();
    ok(&[
        "train", "--format", "criteo", "--schema", &p("schema.txt"), "--train", &p("day.tsv"), "--out", &p("m"),
        "--dim", "8", "--epochs", "1", "--batch-size", "16", "--log-every", "0",
    ]);
    let out = ok(&[
        "eval", "--format", "criteo", "--schema", &p("schema.txt"), "--checkpoint", &p("m/checkpoint"), "--data",
        &p("day.tsv"), "--out", &p("e"), "--mode", "genfea", "--steps", "2",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1 malformed lines"));
    let report = fs::read_to_string(dir.path().join("e/report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("genfea:2:cosine,day,80,"));
}
