use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }

    /// Xavier-uniform for a weight mapping `cols` inputs to `rows` outputs.
    fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            layers: 2,
            heads: 2,
            ffn_hidden: 128,
            temperature: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn with_dim(d: usize) -> Self {
        Self {
            d,
            ffn_hidden: 4 * d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// One pre-norm encoder block: self-attention then a ReLU feed-forward, each
/// wrapped in a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Block {
    fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let f = cfg.ffn_hidden;
        Self {
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            wq: Tensor::xavier(d, d, rng),
            bq: Tensor::zeros(1, d),
            wk: Tensor::xavier(d, d, rng),
            bk: Tensor::zeros(1, d),
            wv: Tensor::xavier(d, d, rng),
            bv: Tensor::zeros(1, d),
            wo: Tensor::xavier(d, d, rng),
            bo: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
            w1: Tensor::xavier(f, d, rng),
            b1: Tensor::zeros(1, f),
            w2: Tensor::xavier(d, f, rng),
            b2: Tensor::zeros(1, d),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        let items: [(&str, &'a Tensor); 16] = [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ];
        out.extend(items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]);
    }
}

/// All trainable state. The same struct doubles as a gradient buffer and as
/// Adam moment storage (see [`ModelParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// One table per feature field, `vocab_k x d`.
    pub embeddings: Vec<Tensor>,
    /// `3 x d`; row 0 is reserved, rows 1 and 2 encode y=0 and y=1.
    pub label_embedding: Tensor,
    pub mask_embedding: Tensor,
    /// `(N+1) x d`, label slot last.
    pub positions: Tensor,
    pub blocks: Vec<Block>,
    pub output_proj: Tensor,
}

impl ModelParams {
    pub fn init(schema: &FeatureSchema, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let row_bound = (6.0 / (1 + d) as f64).sqrt();
        let embeddings = schema
            .features()
            .map(|f| Tensor::uniform(f.vocab_size as usize, d, row_bound, &mut rng))
            .collect();
        let label_embedding = Tensor::uniform(3, d, row_bound, &mut rng);
        let mask_embedding = Tensor::uniform(1, d, row_bound, &mut rng);
        let positions = Tensor::uniform(schema.n_positions(), d, row_bound, &mut rng);
        let blocks = (0..config.layers).map(|_| Block::init(&config, &mut rng)).collect();
        let output_proj = Tensor::xavier(d, d, &mut rng);
        Ok(Self {
            config,
            embeddings,
            label_embedding,
            mask_embedding,
            positions,
            blocks,
            output_proj,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn n_features(&self) -> usize {
        self.embeddings.len()
    }

    pub fn n_positions(&self) -> usize {
        self.positions.rows
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (k, e) in self.embeddings.iter().enumerate() {
            out.push((format!("embedding.{k}"), e));
        }
        out.push(("label_embedding".into(), &self.label_embedding));
        out.push(("mask_embedding".into(), &self.mask_embedding));
        out.push(("positions".into(), &self.positions));
        for (l, b) in self.blocks.iter().enumerate() {
            b.named(&format!("block{l}"), &mut out);
        }
        out.push(("output_proj".into(), &self.output_proj));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.embeddings.iter_mut().collect();
        out.push(&mut self.label_embedding);
        out.push(&mut self.mask_embedding);
        out.push(&mut self.positions);
        for b in &mut self.blocks {
            b.tensors_mut(&mut out);
        }
        out.push(&mut self.output_proj);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn n_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src: Vec<&Tensor> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += scale * b);
        }
    }

    /// Rounds every parameter to the nearest 32-bit float, the precision
    /// checkpoints are stored at.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Checks that every tensor is finite, naming the first offender.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named_tensors() {
            if !t.is_finite() {
                return Err(Error::Numeric(format!("non-finite values in `{name}`")));
            }
        }
        Ok(())
    }

    pub fn matches_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.n_features() != schema.n_features() || self.n_positions() != schema.n_positions() {
            return Err(Error::Config(format!(
                "model has {} feature tables, schema has {} features",
                self.n_features(),
                schema.n_features()
            )));
        }
        for (k, (e, f)) in self.embeddings.iter().zip(schema.features()).enumerate() {
            if e.rows != f.vocab_size as usize {
                return Err(Error::Config(format!(
                    "embedding {k} (`{}`) has {} rows, schema vocab is {}",
                    f.name, e.rows, f.vocab_size
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::parse(
            "field u role=user buckets=5\nfield i role=item buckets=7\nfield y role=label buckets=2\n",
        )
        .unwrap()
    }

    #[test]
    fn shapes() {
        let p = ModelParams::init(&schema(), ModelConfig::with_dim(8), 1).unwrap();
        assert_eq!(p.embeddings[0].rows, 6);
        assert_eq!(p.embeddings[1].rows, 8);
        assert_eq!(p.positions.rows, 3);
        assert_eq!(p.blocks.len(), 2);
        assert_eq!(p.blocks[0].w1.rows, 32);
        assert_eq!(p.named_tensors().len(), 2 + 3 + 2 * 16 + 1);
        p.check_finite().unwrap();
        p.matches_schema(&schema()).unwrap();
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(&schema(), ModelConfig::with_dim(8), 1).unwrap();
        let b = ModelParams::init(&schema(), ModelConfig::with_dim(8), 1).unwrap();
        let c = ModelParams::init(&schema(), ModelConfig::with_dim(8), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_dims() {
        let cfg = ModelConfig {
            d: 6,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(ModelParams::init(&schema(), cfg, 0).is_err());
    }

    #[test]
    fn zeros_like_and_add_scaled() {
        let p = ModelParams::init(&schema(), ModelConfig::with_dim(4), 3).unwrap();
        let mut z = p.zeros_like();
        assert!(z.named_tensors().iter().all(|(_, t)| t.data.iter().all(|&x| x == 0.0)));
        z.add_scaled(&p, 2.0);
        assert_eq!(z.output_proj.data[0], 2.0 * p.output_proj.data[0]);
    }
}
