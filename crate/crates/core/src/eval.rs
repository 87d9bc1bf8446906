//! Ranking and calibration metrics, dataset evaluation and schedule sweeps.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{cosine, embed_inputs, encode, generate_vector, ModelParams, Slot};
use crate::refine::{InferenceMode, MaskScheduleKind, Refiner, TokenPools};
use crate::schema::FeatureSchema;

pub const LOGLOSS_CLAMP: f64 = 1e-7;

pub const REPORT_HEADER: &str = "mode,dataset,n,auc,logloss,auc_corrupted,seed";
pub const SWEEP_HEADER: &str = "config,auc,logloss";

/// Area under the ROC curve by the rank-sum formula, ties sharing their
/// average rank.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain(format!(
            "AUC undefined with {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Domain("logloss of an empty set".into()));
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: String,
    pub dataset: String,
    pub n: usize,
    pub auc: f64,
    pub logloss: f64,
    /// AUC over samples with at least one corrupted field, when that subset
    /// has both classes.
    pub auc_corrupted: Option<f64>,
    pub seed: u64,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let corrupted = self.auc_corrupted.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.mode, self.dataset, self.n, self.auc, self.logloss, corrupted, self.seed
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions<'a> {
    /// 0 or 1 runs on the calling thread.
    pub threads: usize,
    pub dataset_id: String,
    pub seed: u64,
    pub pools: Option<&'a TokenPools>,
    pub use_cache: bool,
}

/// Predicted probabilities for every sample, in input order.
pub fn predict_dataset(
    params: &ModelParams,
    schema: &FeatureSchema,
    data: &Dataset,
    mode: InferenceMode,
    opts: &EvalOptions<'_>,
) -> Result<Vec<f64>> {
    mode.validate()?;
    let mut refiner = Refiner::new(params).cached(opts.use_cache);
    refiner.pools = opts.pools;
    let run = || -> Result<Vec<f64>> {
        data.samples
            .par_iter()
            .map(|s| refiner.infer(s, schema, mode))
            .collect()
    };
    if opts.threads <= 1 {
        return data.samples.iter().map(|s| refiner.infer(s, schema, mode)).collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(run)
}

pub fn evaluate(
    params: &ModelParams,
    schema: &FeatureSchema,
    data: &Dataset,
    mode: InferenceMode,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let probs = predict_dataset(params, schema, data, mode, opts)?;
    let labels = data.labels();
    let auc_corrupted = match &data.corruption {
        Some(_) => {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.is_corrupted(i) == Some(true)).collect();
            let p: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            auc(&p, &y).ok()
        }
        None => None,
    };
    Ok(EvalReport {
        mode: mode.to_string(),
        dataset: opts.dataset_id.clone(),
        n: data.len(),
        auc: auc(&probs, &labels)?,
        logloss: logloss(&probs, &labels)?,
        auc_corrupted,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: String,
    pub auc: f64,
    pub logloss: f64,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.config, self.auc, self.logloss)
    }
}

/// Refinement with each of the five schedules at `steps` steps.
pub fn sweep_schedules(
    params: &ModelParams,
    schema: &FeatureSchema,
    data: &Dataset,
    steps: usize,
    opts: &EvalOptions<'_>,
) -> Result<Vec<SweepRow>> {
    MaskScheduleKind::ALL
        .into_iter()
        .map(|schedule| {
            let r = evaluate(params, schema, data, InferenceMode::Sgctr { steps, schedule }, opts)?;
            Ok(SweepRow {
                config: schedule.to_string(),
                auc: r.auc,
                logloss: r.logloss,
            })
        })
        .collect()
}

/// Refinement with `schedule` at each step count.
pub fn sweep_steps(
    params: &ModelParams,
    schema: &FeatureSchema,
    data: &Dataset,
    schedule: MaskScheduleKind,
    steps_list: &[usize],
    opts: &EvalOptions<'_>,
) -> Result<Vec<SweepRow>> {
    steps_list
        .iter()
        .map(|&steps| {
            let r = evaluate(params, schema, data, InferenceMode::Sgctr { steps, schedule }, opts)?;
            Ok(SweepRow {
                config: format!("T={steps}"),
                auc: r.auc,
                logloss: r.logloss,
            })
        })
        .collect()
}

/// Top-1 accuracy of recovering field `k` from all other features: `k` and
/// the label are masked and the generated vector is matched against every
/// row of field `k`'s table (ties go to the lower token id).
pub fn masked_recovery(params: &ModelParams, schema: &FeatureSchema, data: &Dataset, k: usize) -> Result<f64> {
    if k >= schema.n_features() {
        return Err(Error::Contract(format!("field index {k} out of range")));
    }
    if data.is_empty() {
        return Err(Error::Domain("recovery accuracy of an empty set".into()));
    }
    let table = &params.embeddings[k];
    let hits: Result<Vec<bool>> = data
        .samples
        .par_iter()
        .map(|s| {
            let mut slots: Vec<Slot> = s.tokens.iter().map(|&t| Slot::observed(t)).collect();
            slots[k] = Slot::Masked;
            slots.push(Slot::Masked);
            let h = encode(&embed_inputs(&slots, params), params)?.h;
            let unit = generate_vector(&h, k, params)?;
            let mut best = (f64::NEG_INFINITY, 0usize);
            for v in 0..table.rows {
                let c = cosine(&unit, table.row(v))?;
                if c > best.0 {
                    best = (c, v);
                }
            }
            Ok(best.1 == s.tokens[k] as usize)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

pub fn write_reports<W: std::io::Write>(mut w: W, reports: &[EvalReport]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_sweep<W: std::io::Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
