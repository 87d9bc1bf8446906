//! Masked diffusion training: sample a noise level per sample, mask that
//! fraction of fields, and reconstruct the masked fields with a sampled
//! softmax whose negatives are the other ground-truth tokens in the batch.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EncodedSample;
use crate::error::{Error, Result};
use crate::model::{
    cosine_with_grad, embed_backward, embed_inputs, encode, encode_with_tape, encoder_backward,
    generate_vector_backward, generate_vector_full, ModelConfig, ModelParams, Slot, Tensor,
};
use crate::schema::FeatureSchema;

/// Training-time mask ratio `lambda(t) = max(t, min_ratio)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub min_ratio: f64,
}

impl NoiseSchedule {
    /// Floors the ratio at one field out of `n_maskable`.
    pub fn for_fields(n_maskable: usize) -> Self {
        Self {
            min_ratio: 1.0 / n_maskable.max(1) as f64,
        }
    }

    pub fn ratio(&self, t: f64) -> f64 {
        t.max(self.min_ratio).min(1.0)
    }
}

/// Which feature positions of one sample are masked, and the loss weight.
/// The label is masked in addition to `masked`, always.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// Sampled noise level; `None` for fixed-ratio masking.
    pub t: Option<f64>,
    pub ratio: f64,
    /// Sorted feature positions.
    pub masked: Vec<usize>,
    /// Multiplier on the reconstruction terms (`1 / ratio` for diffusion).
    pub weight: f64,
}

impl MaskPlan {
    /// Plan with an explicit ratio and mask set; weight `1 / ratio`.
    pub fn forced(ratio: f64, masked: Vec<usize>) -> Self {
        Self {
            t: Some(ratio),
            ratio,
            masked,
            weight: 1.0 / ratio,
        }
    }

    pub fn slots(&self, sample: &EncodedSample) -> Vec<Slot> {
        let mut slots: Vec<Slot> = sample.tokens.iter().map(|&t| Slot::observed(t)).collect();
        for &k in &self.masked {
            slots[k] = Slot::Masked;
        }
        slots.push(Slot::Masked);
        slots
    }
}

fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

fn draw_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    let mut v = rand::seq::index::sample(rng, n, count).into_vec();
    v.sort_unstable();
    v
}

/// Draws `t ~ Uniform(0, 1]`, then `max(1, round(lambda(t) N))` distinct
/// feature positions uniformly.
pub fn sample_mask_plan<R: Rng + ?Sized>(rng: &mut R, schema: &FeatureSchema, schedule: &NoiseSchedule) -> MaskPlan {
    let n = schema.n_features();
    let t = 1.0 - rng.gen::<f64>();
    let ratio = schedule.ratio(t);
    let masked = draw_positions(rng, n, masked_count(ratio, n));
    MaskPlan {
        t: Some(t),
        ratio,
        masked,
        weight: 1.0 / ratio,
    }
}

/// Fixed-ratio uniform masking with unit loss weight.
pub fn bert_mask_plan<R: Rng + ?Sized>(rng: &mut R, schema: &FeatureSchema, ratio: f64) -> MaskPlan {
    debug_assert!(ratio > 0.0 && ratio <= 1.0);
    let n = schema.n_features();
    let masked = draw_positions(rng, n, masked_count(ratio, n));
    MaskPlan {
        t: None,
        ratio,
        masked,
        weight: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskingMode {
    Diffusion,
    BertFixed(f64),
}

impl fmt::Display for MaskingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskingMode::Diffusion => write!(f, "diffusion"),
            MaskingMode::BertFixed(r) => write!(f, "bert:{r}"),
        }
    }
}

impl FromStr for MaskingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "diffusion" {
            return Ok(MaskingMode::Diffusion);
        }
        if let Some(r) = s.strip_prefix("bert:") {
            let ratio: f64 = r
                .parse()
                .map_err(|_| Error::Config(format!("bad bert mask ratio `{r}`")))?;
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::Config(format!("bert mask ratio must be in (0,1], got {ratio}")));
            }
            return Ok(MaskingMode::BertFixed(ratio));
        }
        Err(Error::Config(format!(
            "unknown mask mode `{s}` (expected diffusion or bert:<ratio>)"
        )))
    }
}

impl MaskingMode {
    pub fn plan<R: Rng + ?Sized>(&self, rng: &mut R, schema: &FeatureSchema) -> MaskPlan {
        match *self {
            MaskingMode::Diffusion => sample_mask_plan(rng, schema, &NoiseSchedule::for_fields(schema.n_features())),
            MaskingMode::BertFixed(r) => bert_mask_plan(rng, schema, r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub masking: MaskingMode,
    /// Weight of the label reconstruction term.
    pub alpha: f64,
    /// Print a progress line to stderr every this many steps (0 = quiet).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 256,
            epochs: 3,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            masking: MaskingMode::Diffusion,
            alpha: 10.0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for in-batch negatives".into()));
        }
        if !(self.lr >= 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::Config("learning rate and alpha must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        Ok(())
    }
}

/// One reconstruction term of the sampled softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTerm {
    pub sample: usize,
    pub position: usize,
    pub loss: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchLoss {
    /// Mean over samples of `weight * sum(field terms) + alpha * label term`.
    pub loss: f64,
    pub field_terms: Vec<FieldTerm>,
    pub label_terms: Vec<f64>,
    /// Masked fields whose candidate set held only the target.
    pub degenerate: usize,
    pub mean_ratio: f64,
}

/// Sorted distinct tokens per field across the batch.
fn candidate_sets(batch: &[&EncodedSample], n_features: usize) -> Vec<Vec<u32>> {
    (0..n_features)
        .map(|k| {
            let mut c: Vec<u32> = batch.iter().map(|s| s.tokens[k]).collect();
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect()
}

/// `-log softmax(target)` over `cos(row_c, unit) / tau`, with optional
/// gradient accumulation (`scale` multiplies the term).
#[allow(clippy::too_many_arguments)]
fn softmax_term(
    table: &Tensor,
    candidates: &[u32],
    target: u32,
    unit: &[f64],
    tau: f64,
    scale: f64,
    d_table: Option<&mut Tensor>,
    d_unit: &mut [f64],
) -> Result<f64> {
    let mut logits = Vec::with_capacity(candidates.len());
    let mut grads = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let (cos, d_row, d_u) = cosine_with_grad(table.row(c as usize), unit)?;
        logits.push(cos / tau);
        grads.push((d_row, d_u));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let ti = candidates
        .iter()
        .position(|&c| c == target)
        .expect("target is always a candidate");
    let loss = lse - logits[ti];
    if let Some(d_table) = d_table {
        for (i, &c) in candidates.iter().enumerate() {
            let p = (logits[i] - lse).exp();
            let g = scale * (p - f64::from(u8::from(i == ti))) / tau;
            if g == 0.0 {
                continue;
            }
            let (d_row, d_u) = &grads[i];
            d_table.row_mut(c as usize).iter_mut().zip(d_row).for_each(|(a, b)| *a += g * b);
            d_unit.iter_mut().zip(d_u).for_each(|(a, b)| *a += g * b);
        }
    }
    Ok(loss)
}

/// Loss of a batch under explicit mask plans, optionally accumulating
/// gradients of the mean loss into `grads`.
pub fn batch_objective(
    batch: &[&EncodedSample],
    plans: &[MaskPlan],
    params: &ModelParams,
    alpha: f64,
    mut grads: Option<&mut ModelParams>,
) -> Result<BatchLoss> {
    if batch.len() < 2 {
        return Err(Error::Contract("batch needs at least two samples".into()));
    }
    if plans.len() != batch.len() {
        return Err(Error::Contract("one mask plan per sample".into()));
    }
    let n = params.n_features();
    let b = batch.len() as f64;
    let tau = params.temperature();
    let d = params.d();
    let candidates = candidate_sets(batch, n);
    let mut out = BatchLoss::default();
    let mut total = 0.0;
    for (si, (sample, plan)) in batch.iter().zip(plans).enumerate() {
        let slots = plan.slots(sample);
        let x = embed_inputs(&slots, params);
        let (h, tape) = if grads.is_some() {
            let (h, tape) = encode_with_tape(&x, params)?;
            (h, Some(tape))
        } else {
            (encode(&x, params)?.h, None)
        };
        let mut dh = Tensor::zeros(h.rows, h.cols);
        let mut field_sum = 0.0;
        for &k in &plan.masked {
            let cands = &candidates[k];
            if cands.len() < 2 {
                out.degenerate += 1;
                out.field_terms.push(FieldTerm {
                    sample: si,
                    position: k,
                    loss: 0.0,
                    candidates: cands.len(),
                });
                continue;
            }
            let gen = generate_vector_full(&h, k, params)?;
            let mut d_unit = vec![0.0; d];
            let term = softmax_term(
                &params.embeddings[k],
                cands,
                sample.tokens[k],
                &gen.unit,
                tau,
                plan.weight / b,
                grads.as_deref_mut().map(|g| &mut g.embeddings[k]),
                &mut d_unit,
            )?;
            field_sum += term;
            out.field_terms.push(FieldTerm {
                sample: si,
                position: k,
                loss: term,
                candidates: cands.len(),
            });
            if let Some(g) = grads.as_deref_mut() {
                let dk = generate_vector_backward(h.row(k), &gen, &d_unit, params, g);
                dh.row_mut(k).iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
            }
        }
        // Label slot: full two-class softmax over rows 1 (y=0) and 2 (y=1).
        let gen = generate_vector_full(&h, n, params)?;
        let mut d_unit = vec![0.0; d];
        let label_term = softmax_term(
            &params.label_embedding,
            &[1, 2],
            u32::from(sample.label) + 1,
            &gen.unit,
            tau,
            alpha / b,
            grads.as_deref_mut().map(|g| &mut g.label_embedding),
            &mut d_unit,
        )?;
        out.label_terms.push(label_term);
        total += plan.weight * field_sum + alpha * label_term;
        out.mean_ratio += plan.ratio / b;

        if let (Some(g), Some(tape)) = (grads.as_deref_mut(), tape) {
            let dn = generate_vector_backward(h.row(n), &gen, &d_unit, params, g);
            dh.row_mut(n).iter_mut().zip(&dn).for_each(|(a, b)| *a += b);
            let dx = encoder_backward(&tape, params, g, dh);
            embed_backward(&slots, &dx, g);
        }
    }
    out.loss = total / b;
    if !out.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {}", out.loss)));
    }
    Ok(out)
}

/// Per-masked-position reconstruction terms of a batch.
pub fn field_loss(batch: &[&EncodedSample], plans: &[MaskPlan], params: &ModelParams) -> Result<BatchLoss> {
    batch_objective(batch, plans, params, 0.0, None)
}

/// Monte-Carlo estimate of the training objective with freshly drawn plans.
pub fn training_loss<R: Rng + ?Sized>(
    batch: &[&EncodedSample],
    params: &ModelParams,
    schema: &FeatureSchema,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let plans: Vec<MaskPlan> = batch.iter().map(|_| cfg.masking.plan(rng, schema)).collect();
    Ok(batch_objective(batch, &plans, params, cfg.alpha, None)?.loss)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let gs: Vec<&Tensor> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub mask_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    pub degenerate: usize,
}

/// Seed offset separating the training stream from parameter initialization.
const TRAIN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// XORed into the training seed to seed mask plans of the held-out objective.
pub const HELDOUT_STREAM: u64 = 0x2545_f491;

/// Trains from a fresh initialization with shuffled minibatches and Adam.
/// A trailing batch with a single sample is dropped.
pub fn fit(train: &[EncodedSample], schema: &FeatureSchema, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Data(format!("need at least two training samples, got {}", train.len())));
    }
    for s in train {
        s.check(schema)?;
    }
    let mut params = ModelParams::init(schema, cfg.model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let mut adam = Adam::new(&params, cfg);
    let mut trace = Vec::new();
    let mut degenerate = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let plans: Vec<MaskPlan> = batch.iter().map(|_| cfg.masking.plan(&mut rng, schema)).collect();
            let mut grads = params.zeros_like();
            let stats = batch_objective(&batch, &plans, &params, cfg.alpha, Some(&mut grads))
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                    other => other,
                })?;
            grads
                .check_finite()
                .map_err(|e| Error::Numeric(format!("step {step}: gradient {e}")))?;
            adam.step(&mut params, &grads);
            degenerate += stats.degenerate;
            trace.push(TraceRow {
                step,
                loss: stats.loss,
                mask_ratio: stats.mean_ratio,
            });
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                eprintln!("epoch {epoch} step {step} loss {:.6} mask_ratio {:.3}", stats.loss, stats.mean_ratio);
            }
            step += 1;
        }
    }
    params.check_finite()?;
    Ok(FitResult {
        params,
        trace,
        degenerate,
    })
}

/// Mean batch loss over `data` with plans drawn from a fixed seed; a
/// reproducible held-out objective.
pub fn heldout_loss(
    data: &[EncodedSample],
    params: &ModelParams,
    schema: &FeatureSchema,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in data.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch: Vec<&EncodedSample> = chunk.iter().collect();
        total += training_loss(&batch, params, schema, cfg, &mut rng)?;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Data("held-out set too small for one batch".into()));
    }
    Ok(total / batches as f64)
}

/// Writes the `step,loss,mask_ratio` trace.
pub fn write_trace<W: std::io::Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "step,loss,mask_ratio")?;
    for r in trace {
        writeln!(w, "{},{},{}", r.step, r.loss, r.mask_ratio)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(n: usize) -> FeatureSchema {
        let mut text = String::from("field y role=label buckets=2\n");
        for i in 0..n {
            let role = if i % 2 == 0 { "user" } else { "item" };
            text += &format!("field f{i} role={role} buckets=9\n");
        }
        FeatureSchema::parse(&text).unwrap()
    }

    #[test]
    fn noise_schedule_floor() {
        let s = NoiseSchedule::for_fields(10);
        assert_eq!(s.ratio(0.01), 0.1);
        assert_eq!(s.ratio(0.5), 0.5);
        assert_eq!(s.ratio(1.0), 1.0);
    }

    #[test]
    fn plan_counts() {
        let sc = schema(20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(bert_mask_plan(&mut rng, &sc, 0.15).masked.len(), 3);
        assert_eq!(bert_mask_plan(&mut rng, &sc, 1.0).masked.len(), 20);
        let full = NoiseSchedule { min_ratio: 1.0 };
        assert_eq!(sample_mask_plan(&mut rng, &sc, &full).masked, (0..20).collect::<Vec<_>>());
        for _ in 0..200 {
            let p = sample_mask_plan(&mut rng, &sc, &NoiseSchedule::for_fields(20));
            assert!(!p.masked.is_empty());
            assert!(p.t.unwrap() > 0.0 && p.t.unwrap() <= 1.0);
            assert!(p.masked.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(p.masked.len(), masked_count(p.ratio, 20));
        }
    }

    #[test]
    fn minimum_ratio_masks_one_field() {
        let sc = schema(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut saw_floor = false;
        for _ in 0..500 {
            let p = sample_mask_plan(&mut rng, &sc, &NoiseSchedule::for_fields(10));
            if p.ratio == 0.1 {
                saw_floor = true;
                assert_eq!(p.masked.len(), 1);
            }
        }
        assert!(saw_floor);
    }

    #[test]
    fn plan_slots_mask_label() {
        let s = EncodedSample::new(vec![1, 2, 3], 1);
        let p = MaskPlan::forced(0.5, vec![1]);
        assert_eq!(
            p.slots(&s),
            vec![Slot::observed(1), Slot::Masked, Slot::observed(3), Slot::Masked]
        );
    }

    #[test]
    fn mask_mode_parsing() {
        assert_eq!("diffusion".parse::<MaskingMode>().unwrap(), MaskingMode::Diffusion);
        assert_eq!("bert:0.15".parse::<MaskingMode>().unwrap(), MaskingMode::BertFixed(0.15));
        assert!("bert:0".parse::<MaskingMode>().is_err());
        assert!("gibbs".parse::<MaskingMode>().is_err());
        assert_eq!(MaskingMode::BertFixed(0.15).to_string(), "bert:0.15");
    }

    fn tiny_params(sc: &FeatureSchema) -> ModelParams {
        let cfg = ModelConfig {
            d: 4,
            layers: 1,
            heads: 2,
            ffn_hidden: 8,
            temperature: 0.5,
        };
        ModelParams::init(sc, cfg, 9).unwrap()
    }

    #[test]
    fn equal_candidates_give_ln2() {
        // Two candidates with identical embedding rows: uniform softmax.
        let sc = schema(2);
        let mut p = tiny_params(&sc);
        let r = p.embeddings[1].row(3).to_vec();
        p.embeddings[1].row_mut(5).copy_from_slice(&r);
        let a = EncodedSample::new(vec![1, 3], 0);
        let b = EncodedSample::new(vec![1, 5], 1);
        let plans = vec![MaskPlan::forced(0.5, vec![1]), MaskPlan::forced(0.5, vec![1])];
        let l = field_loss(&[&a, &b], &plans, &p).unwrap();
        assert_eq!(l.field_terms.len(), 2);
        for t in &l.field_terms {
            assert!((t.loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_candidates_counted() {
        let sc = schema(2);
        let p = tiny_params(&sc);
        let a = EncodedSample::new(vec![1, 3], 0);
        let b = EncodedSample::new(vec![2, 3], 1);
        let plans = vec![MaskPlan::forced(0.5, vec![1]), MaskPlan::forced(0.5, vec![1])];
        let l = field_loss(&[&a, &b], &plans, &p).unwrap();
        assert_eq!(l.degenerate, 2);
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn lr_zero_keeps_params() {
        let sc = schema(4);
        let data: Vec<EncodedSample> = (0..20)
            .map(|i| EncodedSample::new(vec![i % 9 + 1, (i * 7) % 9, 3, i % 4], (i % 2) as u8))
            .collect();
        let cfg = TrainConfig {
            model: tiny_params(&sc).config,
            batch_size: 8,
            epochs: 2,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let fitted = fit(&data, &sc, &cfg).unwrap();
        let init = ModelParams::init(&sc, cfg.model, cfg.seed).unwrap();
        assert_eq!(fitted.params, init);
        assert_eq!(fitted.trace.len(), 6);
    }

    #[test]
    fn rejects_bad_configs() {
        let sc = schema(2);
        let data = vec![EncodedSample::new(vec![1, 1], 0); 4];
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(fit(&data, &sc, &cfg), Err(Error::Config(_))));
        assert!(matches!(fit(&data[..1], &sc, &TrainConfig::default()), Err(Error::Data(_))));
    }
}
