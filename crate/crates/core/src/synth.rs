//! Synthetic click data with a planted latent-cluster structure.
//!
//! Generative process, per sample:
//!
//! 1. `z_user ~ Uniform(Z)`.
//! 2. `z_item = z_user` with probability 1/2, otherwise uniform over the other
//!    `Z - 1` clusters; `m = [z_user == z_item]`.
//! 3. User field `k` draws from `p_k(. | z_user)`, item field `k` from
//!    `p_k(. | z_item)`, cross field `k` from `p_k(. | 2 z_item + m)`.
//! 4. Item field 0 is overwritten with `g(user token 0)` with probability
//!    `dependency_strength`, otherwise with a uniform token in `1..=buckets`.
//! 5. `y ~ Bernoulli(0.8 m + 0.1)`, flipped with probability `label_noise`.
//!
//! Every per-cluster categorical is `purity` mass spread uniformly over the
//! cluster's token block plus `1 - purity` spread uniformly over all tokens.
//! Blocks are residue classes of a per-field random permutation of the
//! tokens. Item field 0 uses its categorical only when there is no user
//! field to depend on.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, EncodedSample};
use crate::error::{Error, Result};
use crate::schema::{Encoding, FeatureSchema, FieldRole, FieldSpec};

/// Probability that the item-side cluster equals the user-side cluster.
pub const MATCH_PROB: f64 = 0.5;

/// XORed into the generation seed to seed test-set corruption.
pub const CORRUPTION_STREAM: u64 = 0x5bd1_e995;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_user: usize,
    pub n_item: usize,
    pub n_cross: usize,
    pub clusters: usize,
    /// Non-missing tokens per field; the vocabulary is `buckets + 1`.
    pub buckets: u32,
    pub purity: f64,
    pub dependency_strength: f64,
    pub label_noise: f64,
    pub corruption_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_user: 3,
            n_item: 3,
            n_cross: 2,
            clusters: 4,
            buckets: 40,
            purity: 0.8,
            dependency_strength: 1.0,
            label_noise: 0.0,
            corruption_rate: 0.3,
            n_train: 20_000,
            n_test: 4_000,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0,1], got {v}")))
            }
        };
        prob("purity", self.purity)?;
        prob("dependency_strength", self.dependency_strength)?;
        prob("label_noise", self.label_noise)?;
        prob("corruption_rate", self.corruption_rate)?;
        if self.clusters < 2 {
            return Err(Error::Config("clusters must be at least 2".into()));
        }
        if self.n_item + self.n_cross == 0 {
            return Err(Error::Config("need at least one item or cross field".into()));
        }
        let blocks = if self.n_cross > 0 { 2 * self.clusters } else { self.clusters };
        if (self.buckets as usize) < blocks {
            return Err(Error::Config(format!(
                "buckets ({}) must be at least the number of cluster blocks ({blocks})",
                self.buckets
            )));
        }
        Ok(())
    }

    /// Schema of the generated data: user fields, then item, then cross, then
    /// the label, all id-encoded.
    pub fn schema(&self) -> FeatureSchema {
        let mut fields = Vec::new();
        let groups = [
            ("user", FieldRole::User, self.n_user),
            ("item", FieldRole::Item, self.n_item),
            ("cross", FieldRole::Cross, self.n_cross),
        ];
        for (prefix, role, n) in groups {
            for i in 0..n {
                fields.push(FieldSpec::new(format!("{prefix}{i}"), role, self.buckets).with_encoding(Encoding::Id));
            }
        }
        fields.push(FieldSpec::new("label", FieldRole::Label, 2).with_encoding(Encoding::Id));
        FeatureSchema::new(fields).expect("synthetic schema is valid by construction")
    }
}

/// Complete parameterization of the generative process.
#[derive(Debug, Clone)]
pub struct SynthOracle {
    pub config: SynthConfig,
    pub roles: Vec<FieldRole>,
    /// `categorical[k][c][v]`: probability of token `v` (index 0 unused) in
    /// field `k` under conditioning cluster `c`.
    pub categorical: Vec<Vec<Vec<f64>>>,
    /// `g[u]` for user token `u` of user field 0 (empty without user fields).
    pub dependency: Vec<u32>,
}

impl SynthOracle {
    fn build(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut roles = vec![FieldRole::User; cfg.n_user];
        roles.extend(std::iter::repeat(FieldRole::Item).take(cfg.n_item));
        roles.extend(std::iter::repeat(FieldRole::Cross).take(cfg.n_cross));
        let b = cfg.buckets as usize;
        let categorical = roles
            .iter()
            .map(|role| {
                let n_blocks = if *role == FieldRole::Cross { 2 * cfg.clusters } else { cfg.clusters };
                let mut perm: Vec<usize> = (1..=b).collect();
                perm.shuffle(rng);
                (0..n_blocks)
                    .map(|c| {
                        let block: Vec<usize> = perm
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i % n_blocks == c)
                            .map(|(_, &v)| v)
                            .collect();
                        let mut p = vec![0.0; b + 1];
                        for v in 1..=b {
                            p[v] = (1.0 - cfg.purity) / b as f64;
                        }
                        for &v in &block {
                            p[v] += cfg.purity / block.len() as f64;
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        let dependency = if cfg.n_user > 0 {
            (0..=cfg.buckets).map(|_| rng.gen_range(1..=cfg.buckets)).collect()
        } else {
            Vec::new()
        };
        Self {
            config: cfg.clone(),
            roles,
            categorical,
            dependency,
        }
    }

    /// Index of item field 0, if any.
    pub fn dependent_field(&self) -> Option<usize> {
        (self.config.n_item > 0 && self.config.n_user > 0).then_some(self.config.n_user)
    }

    fn draw_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (v, &pv) in p.iter().enumerate().skip(1) {
            acc += pv;
            if u < acc {
                return v as u32;
            }
        }
        (p.len() - 1) as u32
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> EncodedSample {
        let cfg = &self.config;
        let z_user = rng.gen_range(0..cfg.clusters);
        let z_item = if rng.gen::<f64>() < MATCH_PROB {
            z_user
        } else {
            let other = rng.gen_range(0..cfg.clusters - 1);
            if other >= z_user {
                other + 1
            } else {
                other
            }
        };
        let matched = z_user == z_item;
        let mut tokens = Vec::with_capacity(self.roles.len());
        for (k, role) in self.roles.iter().enumerate() {
            let c = match role {
                FieldRole::User => z_user,
                FieldRole::Item => z_item,
                FieldRole::Cross => 2 * z_item + usize::from(matched),
                FieldRole::Label => unreachable!(),
            };
            tokens.push(Self::draw_categorical(&self.categorical[k][c], rng));
        }
        if let Some(k) = self.dependent_field() {
            tokens[k] = if rng.gen::<f64>() < cfg.dependency_strength {
                self.dependency[tokens[0] as usize]
            } else {
                rng.gen_range(1..=cfg.buckets)
            };
        }
        let p_click = if matched { 0.9 } else { 0.1 };
        let mut label = u8::from(rng.gen::<f64>() < p_click);
        if rng.gen::<f64>() < cfg.label_noise {
            label ^= 1;
        }
        EncodedSample { tokens, label }
    }

    /// Exact `P(y = 1 | tokens)` by enumerating both clusters. With
    /// `corruption_rate > 0` item and cross likelihoods are mixed with the
    /// uniform resampling distribution, giving the posterior for corrupted rows.
    pub fn click_posterior(&self, tokens: &[u32], corruption_rate: f64) -> f64 {
        let cfg = &self.config;
        let z = cfg.clusters;
        let uniform = 1.0 / cfg.buckets as f64;
        let dependent = self.dependent_field();
        let mut num = 0.0;
        let mut den = 0.0;
        for zu in 0..z {
            for zi in 0..z {
                let matched = zu == zi;
                let prior = if matched { MATCH_PROB } else { (1.0 - MATCH_PROB) / (z - 1) as f64 } / z as f64;
                let mut lik = prior;
                for (k, role) in self.roles.iter().enumerate() {
                    if Some(k) == dependent {
                        // item0 carries no cluster information.
                        continue;
                    }
                    let tok = tokens[k] as usize;
                    let p = match role {
                        FieldRole::User => self.categorical[k][zu][tok],
                        FieldRole::Item => self.categorical[k][zi][tok],
                        FieldRole::Cross => self.categorical[k][2 * zi + usize::from(matched)][tok],
                        FieldRole::Label => unreachable!(),
                    };
                    lik *= match role {
                        FieldRole::User => p,
                        _ => (1.0 - corruption_rate) * p + corruption_rate * uniform,
                    };
                }
                let click = if matched { 0.9 } else { 0.1 };
                let click = click * (1.0 - cfg.label_noise) + (1.0 - click) * cfg.label_noise;
                num += lik * click;
                den += lik;
            }
        }
        num / den
    }

    /// Plain-text description of the process and all of its tables.
    pub fn describe(&self) -> String {
        let cfg = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "# synthetic click data oracle");
        let _ = writeln!(s, "seed={}", cfg.seed);
        let _ = writeln!(
            s,
            "fields: user={} item={} cross={} buckets={} clusters={}",
            cfg.n_user, cfg.n_item, cfg.n_cross, cfg.buckets, cfg.clusters
        );
        let _ = writeln!(
            s,
            "purity={} dependency_strength={} label_noise={} corruption_rate={} match_prob={}",
            cfg.purity, cfg.dependency_strength, cfg.label_noise, cfg.corruption_rate, MATCH_PROB
        );
        let _ = writeln!(s, "process:");
        let _ = writeln!(s, "  z_user ~ Uniform(0..{})", cfg.clusters);
        let _ = writeln!(s, "  z_item = z_user w.p. {MATCH_PROB}, else uniform over the other clusters; m = [z_user == z_item]");
        let _ = writeln!(s, "  user field k ~ p_k(.|z_user); item field k ~ p_k(.|z_item); cross field k ~ p_k(.|2*z_item + m)");
        let _ = writeln!(s, "  item0 = g(user0) w.p. dependency_strength, else Uniform(1..={})", cfg.buckets);
        let _ = writeln!(s, "  y ~ Bernoulli(0.8*m + 0.1), flipped w.p. label_noise");
        let _ = writeln!(s, "  test rows: item/cross tokens resampled Uniform(1..={}) w.p. corruption_rate in test_corrupted", cfg.buckets);
        for (k, per_cluster) in self.categorical.iter().enumerate() {
            for (c, p) in per_cluster.iter().enumerate() {
                let probs: Vec<String> = p[1..].iter().map(|x| format!("{x:.6}")).collect();
                let _ = writeln!(s, "p[{k}][{c}] = {}", probs.join(" "));
            }
        }
        if !self.dependency.is_empty() {
            let g: Vec<String> = self.dependency.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "g = {}", g.join(" "));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub schema: FeatureSchema,
    pub train: Dataset,
    pub test: Dataset,
    pub oracle: SynthOracle,
}

/// Draws the oracle tables, then `n_train` followed by `n_test` samples from
/// one seeded stream.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let oracle = SynthOracle::build(cfg, &mut rng);
    let train = (0..cfg.n_train).map(|_| oracle.sample(&mut rng)).collect();
    let test = (0..cfg.n_test).map(|_| oracle.sample(&mut rng)).collect();
    Ok(SynthData {
        schema: cfg.schema(),
        train: Dataset::new(train),
        test: Dataset::new(test),
        oracle,
    })
}

/// Replaces each eligible position, independently with probability `rate`,
/// by a uniform non-zero token. User fields and the label are never touched.
pub fn corrupt<R: Rng + ?Sized>(
    sample: &EncodedSample,
    schema: &FeatureSchema,
    eligible: &[FieldRole],
    rate: f64,
    rng: &mut R,
) -> (EncodedSample, Vec<bool>) {
    debug_assert!((0.0..=1.0).contains(&rate));
    let mut out = sample.clone();
    let mut mask = vec![false; sample.tokens.len()];
    for (k, f) in schema.features().enumerate() {
        if !f.role.is_maskable() || !eligible.contains(&f.role) {
            continue;
        }
        if rng.gen::<f64>() < rate {
            out.tokens[k] = rng.gen_range(1..f.vocab_size);
            mask[k] = true;
        }
    }
    (out, mask)
}

/// Corrupts every sample of `data`, recording the per-position masks.
pub fn corrupt_dataset(data: &Dataset, schema: &FeatureSchema, rate: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible = [FieldRole::Item, FieldRole::Cross];
    let (samples, masks) = data
        .samples
        .iter()
        .map(|s| corrupt(s, schema, &eligible, rate, &mut rng))
        .unzip();
    Dataset {
        samples,
        corruption: Some(masks),
    }
}
