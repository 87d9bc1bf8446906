use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use sgctr_core::data::{parse_csv, read_criteo, Dataset};
use sgctr_core::eval::{evaluate, sweep_schedules, sweep_steps, write_reports, write_sweep, EvalOptions};
use sgctr_core::model::{load_checkpoint, save_checkpoint, ModelConfig};
use sgctr_core::refine::{write_trace_csv, InferenceMode, MaskScheduleKind, Refiner, TokenPools, FULL_VOCAB_LIMIT};
use sgctr_core::schema::FeatureSchema;
use sgctr_core::synth::{corrupt_dataset, synth_generate, SynthConfig, CORRUPTION_STREAM};
use sgctr_core::train::{fit, heldout_loss, write_trace, MaskingMode, TrainConfig, HELDOUT_STREAM};
use sgctr_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sgctr", version, about = "Masked generative CTR training and iterative-refinement inference")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click dataset with a planted feature dependency.
    Synth(SynthArgs),
    /// Train a model with masked-field reconstruction.
    Train(TrainArgs),
    /// Score a dataset and write an evaluation report.
    Eval(EvalArgs),
    /// Evaluate refinement across schedules or step counts.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Key=value file whose entries act as flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    n_user: usize,
    #[arg(long, default_value_t = 3)]
    n_item: usize,
    #[arg(long, default_value_t = 2)]
    n_cross: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 40)]
    buckets: u32,
    #[arg(long, default_value_t = 0.8)]
    purity: f64,
    #[arg(long, default_value_t = 1.0)]
    dependency_strength: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 0.3)]
    corruption_rate: f64,
    #[arg(long, default_value_t = 20_000)]
    n_train: usize,
    #[arg(long, default_value_t = 4_000)]
    n_test: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Csv,
    Criteo,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Optional held-out file; its loss is written to summary.txt.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    format: DataFormat,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Feed-forward width; defaults to 4 * dim.
    #[arg(long)]
    ffn_hidden: Option<usize>,
    #[arg(long, default_value_t = 0.07)]
    temperature: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `diffusion` or `bert:<ratio>`.
    #[arg(long, default_value = "diffusion")]
    mask_mode: MaskingMode,
    /// Weight of the label term relative to the field terms.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sgctr,
    Onestep,
    Genfea,
    Disc,
}

#[derive(Args)]
struct InferenceArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Uncorrupted version of `--data`; rows that differ form the corrupted subset.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    format: DataFormat,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-sample inference.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Reuse first-layer keys/values of the user-side fields across steps.
    #[arg(long)]
    cache: bool,
    /// Recorded in the report; defaults to the data file stem.
    #[arg(long)]
    dataset_id: Option<String>,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    io: InferenceArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Sgctr)]
    mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[arg(long, default_value = "cosine")]
    schedule: MaskScheduleKind,
    /// Also write per-step refinement traces to trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Schedule,
    Steps,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    io: InferenceArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Step count for the schedule axis.
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// Schedule for the steps axis.
    #[arg(long, default_value = "cosine")]
    schedule: MaskScheduleKind,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,8,12")]
    steps_list: Vec<usize>,
}

/// Reads `key = value` lines (`#` comments) into flags placed right after the
/// subcommand, so flags given on the command line override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let path = args
        .get(pos + 1)
        .ok_or_else(|| Error::Config("--config needs a path".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let sub = args.get(1).and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let cmd = Cli::command();
    let sub_cmd = cmd
        .find_subcommand(&sub)
        .ok_or_else(|| Error::Config("--config must follow a subcommand".into()))?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Config(format!("config line {}: unknown key `{}`", i + 1, k.trim())))?;
        if key == "config" {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            if value == "true" {
                flags.push(OsString::from(format!("--{key}")));
            }
        } else {
            flags.push(OsString::from(format!("--{key}")));
            flags.push(OsString::from(value));
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(flags);
    out.extend(args[2..].iter().cloned());
    Ok(out)
}

/// The resolved arguments in config-file form, so a manifest can be passed
/// back with `--config`.
fn manifest_text(sub: &str, matches: &clap::ArgMatches) -> String {
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(sub).expect("known subcommand");
    let mut ids: Vec<&str> = sub_cmd
        .get_arguments()
        .map(|a| a.get_id().as_str())
        .filter(|id| *id != "config")
        .collect();
    ids.sort_unstable();
    let mut s = format!("# sgctr {sub}\n");
    for id in ids {
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            s.push_str(&format!("{} = {}\n", id.replace('_', "-"), vals.join(",")));
        }
    }
    s
}

fn write_manifest(dir: &Path, text: &str) -> Result<()> {
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

fn read_schema(path: &Path) -> Result<FeatureSchema> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read schema {}: {e}", path.display())))?;
    FeatureSchema::parse(&text)
}

fn read_data(path: &Path, schema: &FeatureSchema, format: DataFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    match format {
        DataFormat::Csv => parse_csv(BufReader::new(file), schema),
        DataFormat::Criteo => {
            let read = read_criteo(BufReader::new(file), schema)?;
            if !read.rejected.is_empty() {
                eprintln!("skipped {} malformed lines in {}", read.rejected.len(), path.display());
            }
            Ok(read.dataset)
        }
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(probe)?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, manifest: &str) -> Result<()> {
    let cfg = SynthConfig {
        n_user: a.n_user,
        n_item: a.n_item,
        n_cross: a.n_cross,
        clusters: a.clusters,
        buckets: a.buckets,
        purity: a.purity,
        dependency_strength: a.dependency_strength,
        label_noise: a.label_noise,
        corruption_rate: a.corruption_rate,
        n_train: a.n_train,
        n_test: a.n_test,
        seed: a.seed,
    };
    cfg.validate()?;
    prepare_out_dir(&a.out)?;
    let data = synth_generate(&cfg)?;
    let corrupted = corrupt_dataset(&data.test, &data.schema, cfg.corruption_rate, cfg.seed ^ CORRUPTION_STREAM);
    fs::write(a.out.join("schema.txt"), data.schema.to_text())?;
    for (name, ds) in [("train.csv", &data.train), ("test.csv", &data.test), ("test_corrupted.csv", &corrupted)] {
        let w = BufWriter::new(File::create(a.out.join(name))?);
        sgctr_core::data::write_csv(w, &data.schema, &ds.samples)?;
    }
    fs::write(a.out.join("oracle.txt"), data.oracle.describe())?;
    write_manifest(&a.out, manifest)
}

fn cmd_train(a: &TrainArgs, manifest: &str) -> Result<()> {
    let schema = read_schema(&a.schema)?;
    let mut model = ModelConfig::with_dim(a.dim);
    model.layers = a.layers;
    model.heads = a.heads;
    model.ffn_hidden = a.ffn_hidden.unwrap_or(4 * a.dim);
    model.temperature = a.temperature;
    let cfg = TrainConfig {
        model,
        batch_size: a.batch_size,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        masking: a.mask_mode,
        alpha: a.alpha,
        log_every: a.log_every,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let train = read_data(&a.train, &schema, a.format)?;
    let heldout = a.heldout.as_ref().map(|p| read_data(p, &schema, a.format)).transpose()?;
    prepare_out_dir(&a.out)?;
    let result = fit(&train.samples, &schema, &cfg)?;
    // Report metrics for the parameters exactly as stored.
    let mut params = result.params;
    params.round_to_f32();
    save_checkpoint(&a.out.join("checkpoint"), &params, &schema)?;
    write_trace(BufWriter::new(File::create(a.out.join("loss.csv"))?), &result.trace)?;
    let mut summary = format!(
        "steps={}\ndegenerate_terms={}\nfinal_loss={}\n",
        result.trace.len(),
        result.degenerate,
        result.trace.last().map(|r| r.loss.to_string()).unwrap_or_default()
    );
    if let Some(h) = heldout {
        let loss = heldout_loss(&h.samples, &params, &schema, &cfg, cfg.seed ^ HELDOUT_STREAM)?;
        summary.push_str(&format!("heldout_loss={loss}\n"));
    }
    fs::write(a.out.join("summary.txt"), summary)?;
    write_manifest(&a.out, manifest)
}

struct Loaded {
    schema: FeatureSchema,
    params: sgctr_core::model::ModelParams,
    data: Dataset,
    dataset_id: String,
}

fn load_inputs(io: &InferenceArgs) -> Result<Loaded> {
    let schema = read_schema(&io.schema)?;
    let (params, _) = load_checkpoint(&io.checkpoint, &schema)?;
    let mut data = read_data(&io.data, &schema, io.format)?;
    if let Some(clean) = &io.clean {
        let clean = read_data(clean, &schema, io.format)?;
        data.mark_corruption_against(&clean)?;
    }
    let dataset_id = io.dataset_id.clone().unwrap_or_else(|| {
        io.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(Loaded {
        schema,
        params,
        data,
        dataset_id,
    })
}

fn needs_pools(schema: &FeatureSchema) -> bool {
    schema.features().any(|f| f.vocab_size > FULL_VOCAB_LIMIT)
}

fn inference_mode(mode: ModeArg, steps: usize, schedule: MaskScheduleKind) -> InferenceMode {
    match mode {
        ModeArg::Sgctr => InferenceMode::Sgctr { steps, schedule },
        ModeArg::Onestep => InferenceMode::OneStep,
        ModeArg::Genfea => InferenceMode::GenFea { steps, schedule },
        ModeArg::Disc => InferenceMode::Discriminative,
    }
}

fn cmd_eval(a: &EvalArgs, manifest: &str) -> Result<()> {
    let l = load_inputs(&a.io)?;
    let mode = inference_mode(a.mode, a.steps, a.schedule);
    mode.validate()?;
    prepare_out_dir(&a.io.out)?;
    let pools = (a.mode == ModeArg::Genfea && needs_pools(&l.schema))
        .then(|| TokenPools::from_dataset(&l.data, l.schema.n_features()));
    let opts = EvalOptions {
        threads: a.io.threads,
        dataset_id: l.dataset_id.clone(),
        seed: a.io.seed,
        pools: pools.as_ref(),
        use_cache: a.io.cache,
    };
    let report = evaluate(&l.params, &l.schema, &l.data, mode, &opts)?;
    write_reports(BufWriter::new(File::create(a.io.out.join("report.csv"))?), &[report])?;
    if a.trace && mode != InferenceMode::Discriminative {
        let mut refiner = Refiner::new(&l.params).cached(a.io.cache);
        refiner.pools = pools.as_ref();
        let mut states = Vec::with_capacity(l.data.len());
        for s in &l.data.samples {
            states.push(refiner.infer_with_state(s, &l.schema, mode)?.1.expect("refining mode has a state"));
        }
        let rows: Vec<(usize, &_)> = states.iter().enumerate().collect();
        let mut w = BufWriter::new(File::create(a.io.out.join("trace.csv"))?);
        write_trace_csv(&mut w, &rows)?;
        w.flush()?;
    }
    write_manifest(&a.io.out, manifest)
}

fn cmd_sweep(a: &SweepArgs, manifest: &str) -> Result<()> {
    let l = load_inputs(&a.io)?;
    prepare_out_dir(&a.io.out)?;
    let opts = EvalOptions {
        threads: a.io.threads,
        dataset_id: l.dataset_id.clone(),
        seed: a.io.seed,
        pools: None,
        use_cache: a.io.cache,
    };
    let rows = match a.axis {
        Axis::Schedule => sweep_schedules(&l.params, &l.schema, &l.data, a.steps, &opts)?,
        Axis::Steps => sweep_steps(&l.params, &l.schema, &l.data, a.schedule, &a.steps_list, &opts)?,
    };
    write_sweep(BufWriter::new(File::create(a.io.out.join("sweep.csv"))?), &rows)?;
    write_manifest(&a.io.out, manifest)
}

fn run() -> Result<()> {
    let args = expand_config(std::env::args_os().collect())?;
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (sub, sub_matches) = matches.subcommand().expect("subcommand is required");
    let manifest = manifest_text(sub, sub_matches);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &manifest),
        Command::Train(a) => cmd_train(a, &manifest),
        Command::Eval(a) => cmd_eval(a, &manifest),
        Command::Sweep(a) => cmd_sweep(a, &manifest),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
