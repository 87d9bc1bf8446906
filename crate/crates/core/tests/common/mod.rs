#![allow(dead_code)]

use sgctr_core::data::EncodedSample;
use sgctr_core::model::{ModelConfig, ModelParams, Slot};
use sgctr_core::refine::{gamma, init_state, refine_step, MaskScheduleKind, PositionStatus};
use sgctr_core::schema::{FeatureSchema, FieldRole, FieldSpec};
use sgctr_core::train::{batch_objective, MaskPlan};

/// Schema with the given role counts, `buckets` tokens per field.
pub fn role_schema(n_user: usize, n_item: usize, n_cross: usize, buckets: u32) -> FeatureSchema {
    let mut fields = Vec::new();
    for (prefix, role, n) in [("u", FieldRole::User, n_user), ("i", FieldRole::Item, n_item), ("x", FieldRole::Cross, n_cross)] {
        for k in 0..n {
            fields.push(FieldSpec::new(format!("{prefix}{k}"), role, buckets));
        }
    }
    fields.push(FieldSpec::new("y", FieldRole::Label, 2));
    FeatureSchema::new(fields).unwrap()
}

pub fn tiny_params(schema: &FeatureSchema, d: usize, layers: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        d,
        layers,
        heads: 2,
        ffn_hidden: 2 * d,
        temperature: 0.1,
    };
    ModelParams::init(schema, cfg, seed).unwrap()
}

/// Expected `l_t` before the clamp to the current masked count.
pub fn expected_l(kind: MaskScheduleKind, t: usize, steps: usize, m0: usize) -> usize {
    (gamma(kind, t as f64 / steps as f64).unwrap() * m0 as f64 + 1e-9).floor() as usize
}

/// Steps a refinement through `refine_step` and checks every state-machine
/// invariant along the way.
pub fn check_refinement(
    sample: &EncodedSample,
    schema: &FeatureSchema,
    params: &ModelParams,
    steps: usize,
    kind: MaskScheduleKind,
) -> Result<(), String> {
    let mut state = init_state(sample, schema).map_err(|e| e.to_string())?;
    let users: Vec<usize> = schema
        .features()
        .enumerate()
        .filter(|(_, f)| f.role == FieldRole::User)
        .map(|(k, _)| k)
        .collect();
    let m0 = state.initial_masked();
    if m0 != schema.n_maskable() || state.masked_count() != m0 {
        return Err(format!("M0 {m0} for {} maskable fields", schema.n_maskable()));
    }
    let mut retained_at = vec![None; schema.n_features()];
    let mut prev_masked = m0;
    for t in 1..=steps {
        let before = state.clone();
        state = refine_step(&before, params, t, steps, kind).map_err(|e| e.to_string())?;
        if state.original() != sample.tokens.as_slice() {
            return Err("original tokens changed".into());
        }
        if *state.slots().last().unwrap() != Slot::Masked {
            return Err("label slot not masked".into());
        }
        for &u in &users {
            if state.status()[u] != PositionStatus::Condition {
                return Err(format!("user position {u} mutated at step {t}"));
            }
        }
        let l = expected_l(kind, t, steps, m0).min(prev_masked);
        if state.masked_count() != l {
            return Err(format!("step {t}: {} masked, expected {l}", state.masked_count()));
        }
        if state.trace().len() != t || state.trace()[t - 1].l_t != l {
            return Err(format!("step {t}: trace out of sync"));
        }
        let c = state.confidences();
        let mut newly = Vec::new();
        for (i, (b, a)) in before.status().iter().zip(state.status()).enumerate() {
            match (b, a) {
                (PositionStatus::Masked, PositionStatus::Masked) => {}
                (PositionStatus::Masked, PositionStatus::Retained { token, weight }) => {
                    if retained_at[i].is_some() {
                        return Err(format!("position {i} retained twice"));
                    }
                    retained_at[i] = Some(t);
                    if *token != sample.tokens[i] {
                        return Err(format!("position {i} retained with a different token"));
                    }
                    if !(0.05..=1.0).contains(weight) || *weight != c[i].clamp(0.05, 1.0) {
                        return Err(format!("position {i}: weight {weight} for confidence {}", c[i]));
                    }
                    newly.push(i);
                }
                (x, y) if x == y => {
                    if c[i] != 1.0 {
                        return Err(format!("unmasked position {i} has confidence {}", c[i]));
                    }
                }
                (x, y) => return Err(format!("position {i}: illegal transition {x:?} -> {y:?}")),
            }
        }
        // Everything still masked ranks at or below everything just retained.
        for &m in &state.masked_positions() {
            for &r in &newly {
                if c[m] > c[r] || (c[m] == c[r] && m > r) {
                    return Err(format!("step {t}: masked {m} outranks retained {r}"));
                }
            }
        }
        prev_masked = state.masked_count();
    }
    if state.masked_count() != 0 {
        return Err("masked positions remain after the last step".into());
    }
    let maskable = schema.features().filter(|f| f.role.is_maskable()).count();
    if retained_at.iter().filter(|r| r.is_some()).count() != maskable {
        return Err("not every maskable position was retained exactly once".into());
    }
    Ok(())
}

/// O(n^2) pair count: positives above negatives, ties half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Relative error with a floor on the denominator so that gradients which
/// are zero up to round-off compare by absolute error instead.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error per tensor between backprop and central differences
/// (h = 1e-4) of the batch objective.
pub fn finite_difference_errors(
    params: &ModelParams,
    data: &[EncodedSample],
    plans: &[MaskPlan],
    alpha: f64,
) -> Vec<(String, f64)> {
    let refs: Vec<&EncodedSample> = data.iter().collect();
    let mut grads = params.zeros_like();
    batch_objective(&refs, plans, params, alpha, Some(&mut grads)).unwrap();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.named_tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    let h = 1e-4;
    let mut worst = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let mut w: f64 = 0.0;
        for j in 0..analytic[ti].len() {
            let mut p = params.clone();
            p.tensors_mut()[ti].data[j] += h;
            let up = batch_objective(&refs, plans, &p, alpha, None).unwrap().loss;
            let mut p = params.clone();
            p.tensors_mut()[ti].data[j] -= h;
            let down = batch_objective(&refs, plans, &p, alpha, None).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            if std::env::var("GRAD_DEBUG").is_ok() && rel_err(analytic[ti][j], fd) > 1e-3 {
                eprintln!("{name}[{j}] analytic {} fd {}", analytic[ti][j], fd);
            }
            w = w.max(rel_err(analytic[ti][j], fd));
        }
        worst.push((name.clone(), w));
    }
    worst
}

