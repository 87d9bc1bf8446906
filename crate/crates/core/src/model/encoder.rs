use crate::error::{Error, Result};

use super::params::{Block, ModelParams, Tensor};

const LN_EPS: f64 = 1e-5;

/// Input state of one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// A token scaled by a weight in (0, 1].
    Observed { token: u32, weight: f64 },
    /// Replaced by the shared mask embedding.
    Masked,
}

impl Slot {
    pub fn observed(token: u32) -> Self {
        Slot::Observed { token, weight: 1.0 }
    }

    pub fn is_masked(&self) -> bool {
        matches!(self, Slot::Masked)
    }
}

fn table<'a>(params: &'a ModelParams, position: usize) -> &'a Tensor {
    if position < params.n_features() {
        &params.embeddings[position]
    } else {
        &params.label_embedding
    }
}

fn table_mut(params: &mut ModelParams, position: usize) -> &mut Tensor {
    if position < params.n_features() {
        &mut params.embeddings[position]
    } else {
        &mut params.label_embedding
    }
}

/// Builds the `(N+1) x d` input matrix: `w * E[token] + pos` for observed
/// positions, `mask + pos` for masked ones.
///
/// Panics on a token outside its table; that is a caller bug.
pub fn embed_inputs(slots: &[Slot], params: &ModelParams) -> Tensor {
    assert_eq!(slots.len(), params.n_positions(), "one slot per position");
    let d = params.d();
    let mut x = Tensor::zeros(slots.len(), d);
    for (i, slot) in slots.iter().enumerate() {
        let pos = params.positions.row(i);
        let row = x.row_mut(i);
        match *slot {
            Slot::Observed { token, weight } => {
                let e = table(params, i).row(token as usize);
                for j in 0..d {
                    row[j] = weight * e[j] + pos[j];
                }
            }
            Slot::Masked => {
                let m = params.mask_embedding.row(0);
                for j in 0..d {
                    row[j] = m[j] + pos[j];
                }
            }
        }
    }
    x
}

/// Accumulates the gradient of the input matrix into embedding tables.
pub fn embed_backward(slots: &[Slot], dx: &Tensor, grads: &mut ModelParams) {
    for (i, slot) in slots.iter().enumerate() {
        let g = dx.row(i);
        grads.positions.row_mut(i).iter_mut().zip(g).for_each(|(a, b)| *a += b);
        match *slot {
            Slot::Observed { token, weight } => {
                let row = table_mut(grads, i).row_mut(token as usize);
                row.iter_mut().zip(g).for_each(|(a, b)| *a += weight * b);
            }
            Slot::Masked => {
                let row = grads.mask_embedding.row_mut(0);
                row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn linear_row(x: &[f64], w: &Tensor, b: &Tensor, out: &mut [f64]) {
    for (o, y) in out.iter_mut().enumerate() {
        *y = b.data[o] + dot(w.row(o), x);
    }
}

/// `y = x W^T + b` with `W` stored `out x in`.
fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut y = Tensor::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        linear_row(x.row(i), w, b, y.row_mut(i));
    }
    y
}

fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let xi = x.row(i);
        for o in 0..w.rows {
            let g = dy.data[i * dy.cols + o];
            if g == 0.0 {
                continue;
            }
            db.data[o] += g;
            dw.row_mut(o).iter_mut().zip(xi).for_each(|(a, b)| *a += g * b);
            dx.row_mut(i).iter_mut().zip(w.row(o)).for_each(|(a, b)| *a += g * b);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LnTape {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> (Tensor, LnTape) {
    let d = x.cols;
    let mut y = Tensor::zeros(x.rows, d);
    let mut xhat = Tensor::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(s);
        for j in 0..d {
            let h = (r[j] - mean) * s;
            xhat.data[i * d + j] = h;
            y.data[i * d + j] = gain.data[j] * h + bias.data[j];
        }
    }
    (y, LnTape { xhat, inv_std })
}

fn layer_norm_backward(tape: &LnTape, gain: &Tensor, dy: &Tensor, dgain: &mut Tensor, dbias: &mut Tensor) -> Tensor {
    let d = dy.cols;
    let mut dx = Tensor::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dy.rows {
        let g = dy.row(i);
        let xh = tape.xhat.row(i);
        for j in 0..d {
            dgain.data[j] += g[j] * xh[j];
            dbias.data[j] += g[j];
            dxhat[j] = g[j] * gain.data[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let s = tape.inv_std[i];
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = s * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Multi-head bidirectional attention. Returns the concatenated head outputs
/// and the attention probabilities laid out `[head][query][key]`.
fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> (Tensor, Vec<f64>) {
    let (n, d) = (q.rows, q.cols);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(n, d);
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            for j in 0..n {
                p[j] = scale * dot(qi, &k.row(j)[cols.clone()]);
            }
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in p.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            p.iter_mut().for_each(|x| *x /= sum);
            let o = &mut out.row_mut(i)[cols.clone()];
            for j in 0..n {
                let vj = &v.row(j)[cols.clone()];
                o.iter_mut().zip(vj).for_each(|(a, b)| *a += p[j] * b);
            }
        }
    }
    (out, probs)
}

fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[f64],
    dout: &Tensor,
    heads: usize,
) -> (Tensor, Tensor, Tensor) {
    let (n, d) = (q.rows, q.cols);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(n, d);
    let mut dk = Tensor::zeros(n, d);
    let mut dv = Tensor::zeros(n, d);
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let go = &dout.row(i)[cols.clone()];
            for j in 0..n {
                dp[j] = dot(go, &v.row(j)[cols.clone()]);
                dv.row_mut(j)[cols.clone()]
                    .iter_mut()
                    .zip(go)
                    .for_each(|(a, b)| *a += p[j] * b);
            }
            let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let ds = p[j] * (dp[j] - s) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj: Vec<f64> = k.row(j)[cols.clone()].to_vec();
                dq.row_mut(i)[cols.clone()]
                    .iter_mut()
                    .zip(&kj)
                    .for_each(|(a, b)| *a += ds * b);
                let qi: Vec<f64> = q.row(i)[cols.clone()].to_vec();
                dk.row_mut(j)[cols.clone()]
                    .iter_mut()
                    .zip(&qi)
                    .for_each(|(a, b)| *a += ds * b);
            }
        }
    }
    (dq, dk, dv)
}

/// Saved activations of one block.
#[derive(Debug, Clone)]
struct BlockTape {
    ln1: LnTape,
    a: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<f64>,
    attn: Tensor,
    ln2: LnTape,
    b: Tensor,
    z: Tensor,
    r: Tensor,
}

/// Activations recorded by [`encode_with_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    blocks: Vec<BlockTape>,
}

/// First-layer keys/values of positions whose inputs do not change between
/// calls.
///
/// Deeper layers mix every position through bidirectional attention, so only
/// the first layer's projections of frozen rows are reusable exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    frozen: Vec<usize>,
    inputs: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    full_input: Tensor,
    full_output: Tensor,
}

impl KvCache {
    pub fn frozen(&self) -> &[usize] {
        &self.frozen
    }
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    /// `(N+1) x d` per-position outputs.
    pub h: Tensor,
    pub cache: Option<KvCache>,
}

fn block_forward(x: &Tensor, blk: &Block, heads: usize, kv0: Option<&KvCache>) -> (Tensor, BlockTape) {
    let (a, ln1) = layer_norm(x, &blk.ln1_gain, &blk.ln1_bias);
    let q = linear(&a, &blk.wq, &blk.bq);
    let (k, v) = match kv0 {
        None => (linear(&a, &blk.wk, &blk.bk), linear(&a, &blk.wv, &blk.bv)),
        Some(cache) => {
            let mut k = Tensor::zeros(a.rows, blk.wk.rows);
            let mut v = Tensor::zeros(a.rows, blk.wv.rows);
            for i in 0..a.rows {
                match cache.frozen.iter().position(|&f| f == i) {
                    Some(slot) => {
                        k.row_mut(i).copy_from_slice(&cache.keys[slot]);
                        v.row_mut(i).copy_from_slice(&cache.values[slot]);
                    }
                    None => {
                        linear_row(a.row(i), &blk.wk, &blk.bk, k.row_mut(i));
                        linear_row(a.row(i), &blk.wv, &blk.bv, v.row_mut(i));
                    }
                }
            }
            (k, v)
        }
    };
    let (attn, probs) = attention(&q, &k, &v, heads);
    let proj = linear(&attn, &blk.wo, &blk.bo);
    let mut h1 = x.clone();
    h1.data.iter_mut().zip(&proj.data).for_each(|(a, b)| *a += b);
    let (b, ln2) = layer_norm(&h1, &blk.ln2_gain, &blk.ln2_bias);
    let z = linear(&b, &blk.w1, &blk.b1);
    let mut r = z.clone();
    r.data.iter_mut().for_each(|x| *x = x.max(0.0));
    let f = linear(&r, &blk.w2, &blk.b2);
    let mut out = h1;
    out.data.iter_mut().zip(&f.data).for_each(|(a, b)| *a += b);
    let tape = BlockTape {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        attn,
        ln2,
        b,
        z,
        r,
    };
    (out, tape)
}

fn block_backward(tape: &BlockTape, blk: &Block, grads: &mut Block, heads: usize, dout: &Tensor) -> Tensor {
    // feed-forward branch
    let dr = linear_backward(&tape.r, &blk.w2, dout, &mut grads.w2, &mut grads.b2);
    let mut dz = dr;
    dz.data.iter_mut().zip(&tape.z.data).for_each(|(g, z)| {
        if *z <= 0.0 {
            *g = 0.0
        }
    });
    let db = linear_backward(&tape.b, &blk.w1, &dz, &mut grads.w1, &mut grads.b1);
    let dln2 = layer_norm_backward(&tape.ln2, &blk.ln2_gain, &db, &mut grads.ln2_gain, &mut grads.ln2_bias);
    let mut dh1 = dout.clone();
    dh1.data.iter_mut().zip(&dln2.data).for_each(|(a, b)| *a += b);

    // attention branch
    let dattn = linear_backward(&tape.attn, &blk.wo, &dh1, &mut grads.wo, &mut grads.bo);
    let (dq, dk, dv) = attention_backward(&tape.q, &tape.k, &tape.v, &tape.probs, &dattn, heads);
    let mut da = linear_backward(&tape.a, &blk.wq, &dq, &mut grads.wq, &mut grads.bq);
    let dak = linear_backward(&tape.a, &blk.wk, &dk, &mut grads.wk, &mut grads.bk);
    let dav = linear_backward(&tape.a, &blk.wv, &dv, &mut grads.wv, &mut grads.bv);
    for ((a, b), c) in da.data.iter_mut().zip(&dak.data).zip(&dav.data) {
        *a += b + c;
    }
    let dln1 = layer_norm_backward(&tape.ln1, &blk.ln1_gain, &da, &mut grads.ln1_gain, &mut grads.ln1_bias);
    let mut dx = dh1;
    dx.data.iter_mut().zip(&dln1.data).for_each(|(a, b)| *a += b);
    dx
}

fn check_input(x: &Tensor, params: &ModelParams) -> Result<()> {
    if x.rows != params.n_positions() || x.cols != params.d() {
        return Err(Error::Contract(format!(
            "encoder input is {}x{}, expected {}x{}",
            x.rows,
            x.cols,
            params.n_positions(),
            params.d()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("non-finite encoder input".into()));
    }
    Ok(())
}

fn run(x: &Tensor, params: &ModelParams, kv0: Option<&KvCache>) -> Result<(Tensor, Vec<BlockTape>)> {
    check_input(x, params)?;
    let mut h = x.clone();
    let mut tapes = Vec::with_capacity(params.blocks.len());
    for (l, blk) in params.blocks.iter().enumerate() {
        let (out, tape) = block_forward(&h, blk, params.config.heads, if l == 0 { kv0 } else { None });
        if !out.is_finite() {
            return Err(Error::Numeric(format!("non-finite activation in encoder block {l}")));
        }
        tapes.push(tape);
        h = out;
    }
    Ok((h, tapes))
}

/// Runs the encoder. With zero layers the output equals the input.
pub fn encode(x: &Tensor, params: &ModelParams) -> Result<EncodeOutput> {
    let (h, _) = run(x, params, None)?;
    Ok(EncodeOutput { h, cache: None })
}

pub fn encode_with_tape(x: &Tensor, params: &ModelParams) -> Result<(Tensor, EncoderTape)> {
    let (h, blocks) = run(x, params, None)?;
    Ok((h, EncoderTape { blocks }))
}

/// Backpropagates `dh` through the encoder, accumulating parameter gradients
/// and returning the gradient of the encoder input.
pub fn encoder_backward(tape: &EncoderTape, params: &ModelParams, grads: &mut ModelParams, dh: Tensor) -> Tensor {
    let mut g = dh;
    for (l, bt) in tape.blocks.iter().enumerate().rev() {
        g = block_backward(bt, &params.blocks[l], &mut grads.blocks[l], params.config.heads, &g);
    }
    g
}

/// Plain encode that also records a cache for the `frozen` positions.
pub fn build_cache(x: &Tensor, params: &ModelParams, frozen: &[usize]) -> Result<EncodeOutput> {
    let (h, tapes) = run(x, params, None)?;
    if let Some(&bad) = frozen.iter().find(|&&i| i >= x.rows) {
        return Err(Error::Contract(format!("frozen position {bad} out of range")));
    }
    let (keys, values) = match tapes.first() {
        Some(t) => (
            frozen.iter().map(|&i| t.k.row(i).to_vec()).collect(),
            frozen.iter().map(|&i| t.v.row(i).to_vec()).collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    let cache = KvCache {
        frozen: frozen.to_vec(),
        inputs: frozen.iter().map(|&i| x.row(i).to_vec()).collect(),
        keys,
        values,
        full_input: x.clone(),
        full_output: h.clone(),
    };
    Ok(EncodeOutput { h, cache: Some(cache) })
}

/// Encode reusing first-layer keys/values of frozen positions. The result is
/// bit-identical to [`encode`] on the same input.
pub fn encode_cached(x: &Tensor, params: &ModelParams, frozen: &[usize], cache: &KvCache) -> Result<EncodeOutput> {
    check_input(x, params)?;
    if cache.frozen != frozen {
        return Err(Error::Contract(format!(
            "cache built for frozen positions {:?}, called with {:?}",
            cache.frozen, frozen
        )));
    }
    if cache.full_input.rows != x.rows || cache.full_input.cols != x.cols {
        return Err(Error::Contract("cache shape does not match input".into()));
    }
    for (slot, &i) in frozen.iter().enumerate() {
        if x.row(i) != cache.inputs[slot].as_slice() {
            return Err(Error::Contract(format!("input of frozen position {i} changed since the cache was built")));
        }
    }
    if frozen.is_empty() {
        return encode(x, params);
    }
    if frozen.len() == x.rows {
        return Ok(EncodeOutput {
            h: cache.full_output.clone(),
            cache: None,
        });
    }
    let (h, _) = run(x, params, Some(cache))?;
    Ok(EncodeOutput { h, cache: None })
}
