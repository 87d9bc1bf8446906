//! Inference-time iterative refinement.
//!
//! Start from the user-side fields with every item and cross field masked.
//! Each step encodes the current state, scores every masked position by the
//! cosine between its generated vector and the embedding of the sample's own
//! token, keeps the `l_t` least confident positions masked and retains the
//! rest scaled by their confidence. `l_t = floor(gamma(t/T) * M0)` reaches 0
//! at `t = T`, after which the label slot is scored.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, EncodedSample};
use crate::error::{Error, Result};
use crate::model::{
    build_cache, cosine, embed_inputs, encode, encode_cached, generate_vector, score_label, KvCache, ModelParams,
    Slot, Tensor,
};
use crate::schema::{FeatureSchema, FieldRole};

/// Lower clamp on retention weights.
pub const MIN_WEIGHT: f64 = 0.05;

/// Vocabularies up to this size are searched exhaustively by the
/// generated-feature mode; larger ones use a token pool.
pub const FULL_VOCAB_LIMIT: u32 = 4096;

/// Default number of refinement steps.
pub const DEFAULT_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskScheduleKind {
    Exponential,
    Square,
    Cosine,
    Linear,
    Logarithmic,
}

impl MaskScheduleKind {
    pub const ALL: [MaskScheduleKind; 5] = [
        MaskScheduleKind::Exponential,
        MaskScheduleKind::Square,
        MaskScheduleKind::Cosine,
        MaskScheduleKind::Linear,
        MaskScheduleKind::Logarithmic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskScheduleKind::Exponential => "exponential",
            MaskScheduleKind::Square => "square",
            MaskScheduleKind::Cosine => "cosine",
            MaskScheduleKind::Linear => "linear",
            MaskScheduleKind::Logarithmic => "logarithmic",
        }
    }
}

impl fmt::Display for MaskScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown schedule `{s}` (expected one of: exponential, square, cosine, linear, logarithmic)"
                ))
            })
    }
}

/// Fraction of the initially masked fields still masked at progress `r`.
pub fn gamma(kind: MaskScheduleKind, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("schedule progress {r} outside [0,1]")));
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    if r == 1.0 {
        return Ok(0.0);
    }
    let e = std::f64::consts::E;
    let g = match kind {
        MaskScheduleKind::Linear => 1.0 - r,
        MaskScheduleKind::Cosine => (std::f64::consts::FRAC_PI_2 * r).cos(),
        MaskScheduleKind::Square => 1.0 - r * r,
        MaskScheduleKind::Exponential => 1.0 - (5.0 * r).exp_m1() / 5f64.exp_m1(),
        MaskScheduleKind::Logarithmic => 1.0 - (1.0 + (e - 1.0) * r).ln(),
    };
    Ok(g.clamp(0.0, 1.0))
}

/// `floor(gamma(t/T) * m0)`, with a 1e-9 guard so products that are integers
/// in exact arithmetic are not floored one below by round-off.
pub fn scheduled_mask_count(kind: MaskScheduleKind, t: usize, steps: usize, m0: usize) -> Result<usize> {
    if steps == 0 || t > steps {
        return Err(Error::Contract(format!("step {t} outside 0..={steps}")));
    }
    let g = gamma(kind, t as f64 / steps as f64)?;
    Ok((g * m0 as f64 + 1e-9).floor() as usize)
}

/// The `l_t` sequence for `t = 1..=steps`, ignoring the clamp to the current
/// masked count (which never binds for a non-increasing schedule).
pub fn mask_count_sequence(kind: MaskScheduleKind, steps: usize, m0: usize) -> Result<Vec<usize>> {
    (1..=steps).map(|t| scheduled_mask_count(kind, t, steps, m0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionStatus {
    /// User-side field, observed with weight 1 throughout.
    Condition,
    Masked,
    /// Observed from now on, scaled by `weight`. `token` is the sample's own
    /// token except in generated-feature mode.
    Retained { token: u32, weight: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub l_t: usize,
    /// Feature positions still masked after the step.
    pub masked: Vec<usize>,
    /// Confidence of every feature position at this step.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    original: Vec<u32>,
    status: Vec<PositionStatus>,
    confidence: Vec<f64>,
    step: usize,
    initial_masked: usize,
    trace: Vec<StepTrace>,
}

impl RefinementState {
    pub fn original(&self) -> &[u32] {
        &self.original
    }

    pub fn status(&self) -> &[PositionStatus] {
        &self.status
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidence
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `M0`, the number of fields masked at initialization.
    pub fn initial_masked(&self) -> usize {
        self.initial_masked
    }

    pub fn trace(&self) -> &[StepTrace] {
        &self.trace
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, PositionStatus::Masked))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.status.iter().filter(|s| matches!(s, PositionStatus::Masked)).count()
    }

    pub fn condition_positions(&self) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, PositionStatus::Condition))
            .map(|(i, _)| i)
            .collect()
    }

    /// Model input for the current state; the label slot is always masked.
    pub fn slots(&self) -> Vec<Slot> {
        let mut slots: Vec<Slot> = self
            .status
            .iter()
            .zip(&self.original)
            .map(|(s, &tok)| match *s {
                PositionStatus::Condition => Slot::observed(tok),
                PositionStatus::Masked => Slot::Masked,
                PositionStatus::Retained { token, weight } => Slot::Observed { token, weight },
            })
            .collect();
        slots.push(Slot::Masked);
        slots
    }
}

/// Initial state: user fields are conditions, item and cross fields masked.
pub fn init_state(sample: &EncodedSample, schema: &FeatureSchema) -> Result<RefinementState> {
    sample.check(schema)?;
    let m0 = schema.n_maskable();
    if m0 == 0 {
        return Err(Error::Config("schema has no item or cross fields to refine".into()));
    }
    let status = schema
        .features()
        .map(|f| match f.role {
            FieldRole::User => PositionStatus::Condition,
            _ => PositionStatus::Masked,
        })
        .collect();
    Ok(RefinementState {
        original: sample.tokens.clone(),
        status,
        confidence: vec![1.0; sample.tokens.len()],
        step: 0,
        initial_masked: m0,
        trace: Vec::new(),
    })
}

/// Per-field candidate tokens for generated-feature mode on large vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPools(pub Vec<Vec<u32>>);

impl TokenPools {
    pub fn from_dataset(data: &Dataset, n_features: usize) -> Self {
        let pools = (0..n_features)
            .map(|k| {
                let mut v: Vec<u32> = data.samples.iter().map(|s| s.tokens[k]).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Self(pools)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InferenceMode {
    Sgctr { steps: usize, schedule: MaskScheduleKind },
    OneStep,
    GenFea { steps: usize, schedule: MaskScheduleKind },
    Discriminative,
}

impl InferenceMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            InferenceMode::Sgctr { steps: 0, .. } | InferenceMode::GenFea { steps: 0, .. } => {
                Err(Error::Config("refinement needs at least one step".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceMode::Sgctr { steps, schedule } => write!(f, "sgctr:{steps}:{schedule}"),
            InferenceMode::OneStep => write!(f, "onestep"),
            InferenceMode::GenFea { steps, schedule } => write!(f, "genfea:{steps}:{schedule}"),
            InferenceMode::Discriminative => write!(f, "disc"),
        }
    }
}

/// Runs refinement and prediction for one model. Holds the optional token
/// pools and whether to reuse first-layer keys/values of condition fields.
#[derive(Debug, Clone, Copy)]
pub struct Refiner<'a> {
    pub params: &'a ModelParams,
    pub pools: Option<&'a TokenPools>,
    pub use_cache: bool,
}

impl<'a> Refiner<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            pools: None,
            use_cache: false,
        }
    }

    pub fn with_pools(mut self, pools: &'a TokenPools) -> Self {
        self.pools = Some(pools);
        self
    }

    pub fn cached(mut self, yes: bool) -> Self {
        self.use_cache = yes;
        self
    }

    fn encode_state(&self, state: &RefinementState, cache: &mut Option<KvCache>) -> Result<Tensor> {
        let x = embed_inputs(&state.slots(), self.params);
        if !self.use_cache {
            return Ok(encode(&x, self.params)?.h);
        }
        let frozen = state.condition_positions();
        match cache {
            Some(c) => Ok(encode_cached(&x, self.params, &frozen, c)?.h),
            None => {
                let out = build_cache(&x, self.params, &frozen)?;
                *cache = out.cache;
                Ok(out.h)
            }
        }
    }

    /// Most similar token of field `k` to the generated vector.
    fn generated_token(&self, k: usize, unit: &[f64]) -> Result<u32> {
        let table = &self.params.embeddings[k];
        let candidates: Vec<u32> = if table.rows as u32 <= FULL_VOCAB_LIMIT {
            (0..table.rows as u32).collect()
        } else {
            self.pools
                .and_then(|p| p.0.get(k).cloned())
                .ok_or_else(|| Error::Contract(format!("field {k} needs a token pool for generated features")))?
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for c in candidates {
            let s = cosine(unit, table.row(c as usize))?;
            if s > best.0 {
                best = (s, c);
            }
        }
        Ok(best.1)
    }

    fn step_in_place(
        &self,
        state: &mut RefinementState,
        t: usize,
        steps: usize,
        kind: MaskScheduleKind,
        replace_with_generated: bool,
        cache: &mut Option<KvCache>,
    ) -> Result<()> {
        if t == 0 || t > steps {
            return Err(Error::Contract(format!("refinement step {t} outside 1..={steps}")));
        }
        let masked = state.masked_positions();
        let mut generated = vec![None; state.original.len()];
        state.confidence.iter_mut().for_each(|c| *c = 1.0);
        if !masked.is_empty() {
            let h = self.encode_state(state, cache)?;
            for &i in &masked {
                let unit = generate_vector(&h, i, self.params)?;
                let own = self.params.embeddings[i].row(state.original[i] as usize);
                state.confidence[i] = cosine(&unit, own)?;
                if replace_with_generated {
                    generated[i] = Some(self.generated_token(i, &unit)?);
                }
            }
        }
        let l_t = scheduled_mask_count(kind, t, steps, state.initial_masked)?.min(masked.len());
        let mut order = masked.clone();
        order.sort_by(|&a, &b| state.confidence[a].total_cmp(&state.confidence[b]).then(a.cmp(&b)));
        for &i in &order[l_t..] {
            state.status[i] = match generated[i] {
                Some(token) => PositionStatus::Retained { token, weight: 1.0 },
                None => PositionStatus::Retained {
                    token: state.original[i],
                    weight: state.confidence[i].clamp(MIN_WEIGHT, 1.0),
                },
            };
        }
        state.step = t;
        state.trace.push(StepTrace {
            step: t,
            l_t,
            masked: state.masked_positions(),
            confidences: state.confidence.clone(),
        });
        Ok(())
    }

    pub fn refine_step(
        &self,
        state: &RefinementState,
        t: usize,
        steps: usize,
        kind: MaskScheduleKind,
    ) -> Result<RefinementState> {
        let mut next = state.clone();
        self.step_in_place(&mut next, t, steps, kind, false, &mut None)?;
        Ok(next)
    }

    fn run(
        &self,
        sample: &EncodedSample,
        schema: &FeatureSchema,
        steps: usize,
        kind: MaskScheduleKind,
        replace_with_generated: bool,
    ) -> Result<(f64, RefinementState)> {
        if steps == 0 {
            return Err(Error::Contract("refinement needs at least one step".into()));
        }
        let mut state = init_state(sample, schema)?;
        let mut cache = None;
        for t in 1..=steps {
            self.step_in_place(&mut state, t, steps, kind, replace_with_generated, &mut cache)?;
        }
        let p = self.predict_with(&state, &mut cache)?;
        Ok((p, state))
    }

    pub fn refine(
        &self,
        sample: &EncodedSample,
        schema: &FeatureSchema,
        steps: usize,
        kind: MaskScheduleKind,
    ) -> Result<RefinementState> {
        if steps == 0 {
            return Err(Error::Contract("refinement needs at least one step".into()));
        }
        let mut state = init_state(sample, schema)?;
        let mut cache = None;
        for t in 1..=steps {
            self.step_in_place(&mut state, t, steps, kind, false, &mut cache)?;
        }
        Ok(state)
    }

    fn predict_with(&self, state: &RefinementState, cache: &mut Option<KvCache>) -> Result<f64> {
        if state.masked_count() > 0 {
            return Err(Error::Contract(format!(
                "{} feature positions still masked at prediction",
                state.masked_count()
            )));
        }
        let h = self.encode_state(state, cache)?;
        let (s0, s1) = score_label(&h, self.params)?;
        Ok(sigmoid(s1 - s0))
    }

    pub fn predict(&self, state: &RefinementState) -> Result<f64> {
        self.predict_with(state, &mut None)
    }

    /// Click probability under `mode`, with the final state for refining modes.
    pub fn infer_with_state(
        &self,
        sample: &EncodedSample,
        schema: &FeatureSchema,
        mode: InferenceMode,
    ) -> Result<(f64, Option<RefinementState>)> {
        mode.validate()?;
        match mode {
            InferenceMode::Sgctr { steps, schedule } => {
                self.run(sample, schema, steps, schedule, false).map(|(p, s)| (p, Some(s)))
            }
            InferenceMode::OneStep => self
                .run(sample, schema, 1, MaskScheduleKind::Linear, false)
                .map(|(p, s)| (p, Some(s))),
            InferenceMode::GenFea { steps, schedule } => {
                self.run(sample, schema, steps, schedule, true).map(|(p, s)| (p, Some(s)))
            }
            InferenceMode::Discriminative => {
                sample.check(schema)?;
                let mut slots: Vec<Slot> = sample.tokens.iter().map(|&t| Slot::observed(t)).collect();
                slots.push(Slot::Masked);
                let h = encode(&embed_inputs(&slots, self.params), self.params)?.h;
                let (s0, s1) = score_label(&h, self.params)?;
                Ok((sigmoid(s1 - s0), None))
            }
        }
    }

    pub fn infer(&self, sample: &EncodedSample, schema: &FeatureSchema, mode: InferenceMode) -> Result<f64> {
        self.infer_with_state(sample, schema, mode).map(|(p, _)| p)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One refinement step from `state`.
pub fn refine_step(
    state: &RefinementState,
    params: &ModelParams,
    t: usize,
    steps: usize,
    kind: MaskScheduleKind,
) -> Result<RefinementState> {
    Refiner::new(params).refine_step(state, t, steps, kind)
}

/// All `steps` refinement steps from the initial state.
pub fn refine(
    sample: &EncodedSample,
    schema: &FeatureSchema,
    params: &ModelParams,
    steps: usize,
    kind: MaskScheduleKind,
) -> Result<RefinementState> {
    Refiner::new(params).refine(sample, schema, steps, kind)
}

/// Label probability `sigmoid(s1 - s0)` from a fully refined state.
pub fn predict(state: &RefinementState, params: &ModelParams) -> Result<f64> {
    Refiner::new(params).predict(state)
}

pub fn infer(sample: &EncodedSample, schema: &FeatureSchema, params: &ModelParams, mode: InferenceMode) -> Result<f64> {
    Refiner::new(params).infer(sample, schema, mode)
}

/// Writes `sample,step,l_t,masked,confidences`; list cells are `;`-separated.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, traces: &[(usize, &RefinementState)]) -> Result<()> {
    writeln!(w, "sample,step,l_t,masked,confidences")?;
    for (sample, state) in traces {
        for st in state.trace() {
            let masked: Vec<String> = st.masked.iter().map(usize::to_string).collect();
            let conf: Vec<String> = st.confidences.iter().map(f64::to_string).collect();
            writeln!(w, "{sample},{},{},{},{}", st.step, st.l_t, masked.join(";"), conf.join(";"))?;
        }
    }
    Ok(())
}
