use crate::error::{Error, Result};

use super::params::{ModelParams, Tensor};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to [-1, 1]. Zero-norm inputs are a domain error.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > 0.0 && nv > 0.0) || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Domain("cosine of a zero-norm or non-finite vector".into()));
    }
    let c = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    Ok(c.clamp(-1.0, 1.0))
}

/// Cosine together with its gradients with respect to both arguments.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Domain("cosine of a zero-norm or non-finite vector".into()));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    let inv = 1.0 / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| y * inv - c * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x * inv - c * y / (nb * nb)).collect();
    Ok((c, da, db))
}

/// Output of the generation head at one position.
#[derive(Debug, Clone)]
pub struct GeneratedVector {
    /// `W_out h_k` before normalization.
    pub raw: Vec<f64>,
    pub norm: f64,
    /// Unit-norm generated vector.
    pub unit: Vec<f64>,
}

pub fn generate_vector_full(h: &Tensor, k: usize, params: &ModelParams) -> Result<GeneratedVector> {
    if k >= h.rows {
        return Err(Error::Contract(format!("position {k} out of range ({} rows)", h.rows)));
    }
    let hk = h.row(k);
    let w = &params.output_proj;
    let raw: Vec<f64> = (0..w.rows)
        .map(|o| w.row(o).iter().zip(hk).map(|(a, b)| a * b).sum())
        .collect();
    let n = norm(&raw);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("generated vector at position {k} has norm {n}")));
    }
    let unit = raw.iter().map(|x| x / n).collect();
    Ok(GeneratedVector { raw, norm: n, unit })
}

/// `normalize(W_out h_k)`.
pub fn generate_vector(h: &Tensor, k: usize, params: &ModelParams) -> Result<Vec<f64>> {
    generate_vector_full(h, k, params).map(|g| g.unit)
}

/// Gradient through the normalization and the output projection. Returns the
/// gradient with respect to `h_k`.
pub fn generate_vector_backward(
    h_k: &[f64],
    gen: &GeneratedVector,
    d_unit: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Vec<f64> {
    let proj: f64 = gen.unit.iter().zip(d_unit).map(|(a, b)| a * b).sum();
    let d_raw: Vec<f64> = gen
        .unit
        .iter()
        .zip(d_unit)
        .map(|(u, g)| (g - u * proj) / gen.norm)
        .collect();
    let w = &params.output_proj;
    let mut dh = vec![0.0; h_k.len()];
    for (o, &g) in d_raw.iter().enumerate() {
        grads.output_proj.row_mut(o).iter_mut().zip(h_k).for_each(|(a, b)| *a += g * b);
        dh.iter_mut().zip(w.row(o)).for_each(|(a, b)| *a += g * b);
    }
    dh
}

/// Label scores `(s0, s1)`: cosine between the generated vector at the label
/// slot and the two label embeddings, divided by the temperature.
pub fn score_label(h: &Tensor, params: &ModelParams) -> Result<(f64, f64)> {
    let unit = generate_vector(h, params.n_features(), params)?;
    let tau = params.temperature();
    let s0 = cosine(&unit, params.label_embedding.row(1))? / tau;
    let s1 = cosine(&unit, params.label_embedding.row(2))? / tau;
    Ok((s0, s1))
}
