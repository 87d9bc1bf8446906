//! Python module `sgctr`: schemas, synthetic data, training, refinement
//! inference and metrics. Samples cross the boundary as lists of token ids.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sgctr_core::data::{Dataset, EncodedSample};
use sgctr_core::eval::{auc as core_auc, logloss as core_logloss, masked_recovery};
use sgctr_core::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use sgctr_core::refine::{gamma as core_gamma, InferenceMode, MaskScheduleKind, PositionStatus, Refiner};
use sgctr_core::schema::FeatureSchema;
use sgctr_core::synth::{corrupt_dataset, synth_generate, SynthConfig, CORRUPTION_STREAM};
use sgctr_core::train::{fit as core_fit, MaskingMode, TrainConfig};
use sgctr_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn samples(tokens: Vec<Vec<u32>>, labels: Vec<u8>) -> PyResult<Vec<EncodedSample>> {
    if tokens.len() != labels.len() {
        return Err(PyValueError::new_err(format!("{} rows but {} labels", tokens.len(), labels.len())));
    }
    Ok(tokens.into_iter().zip(labels).map(|(t, y)| EncodedSample::new(t, y)).collect())
}

fn unpack(data: &Dataset) -> (Vec<Vec<u32>>, Vec<u8>) {
    (data.samples.iter().map(|s| s.tokens.clone()).collect(), data.labels())
}

fn mode(name: &str, steps: usize, schedule: &str) -> PyResult<InferenceMode> {
    let schedule: MaskScheduleKind = schedule.parse().map_err(py_err)?;
    let m = match name {
        "sgctr" => InferenceMode::Sgctr { steps, schedule },
        "onestep" => InferenceMode::OneStep,
        "genfea" => InferenceMode::GenFea { steps, schedule },
        "disc" => InferenceMode::Discriminative,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode `{other}` (expected sgctr, onestep, genfea or disc)"
            )))
        }
    };
    m.validate().map_err(py_err)?;
    Ok(m)
}

#[pyclass(name = "Schema", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchema {
    inner: FeatureSchema,
}

#[pymethods]
impl PySchema {
    /// Parses `field <name> role=<user|item|cross|label> buckets=<n>` lines.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        FeatureSchema::parse(text).map(|inner| Self { inner }).map_err(py_err)
    }

    /// The 13 integer + 26 categorical field layout of Criteo files.
    #[staticmethod]
    #[pyo3(signature = (int_buckets=64, cat_buckets=100_000))]
    fn criteo(int_buckets: u32, cat_buckets: u32) -> PyResult<Self> {
        FeatureSchema::criteo(int_buckets, cat_buckets).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn field_names(&self) -> Vec<String> {
        self.inner.features().map(|f| f.name.clone()).collect()
    }

    #[getter]
    fn roles(&self) -> Vec<&'static str> {
        self.inner.features().map(|f| f.role.as_str()).collect()
    }

    #[getter]
    fn hash(&self) -> String {
        format!("{:016x}", self.inner.hash())
    }

    fn __repr__(&self) -> String {
        format!("Schema({} features, hash {:016x})", self.inner.n_features(), self.inner.hash())
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    params: ModelParams,
    schema: FeatureSchema,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized parameters.
    #[staticmethod]
    #[pyo3(signature = (schema, dim=32, layers=2, heads=2, temperature=0.07, seed=1))]
    fn init(schema: &PySchema, dim: usize, layers: usize, heads: usize, temperature: f64, seed: u64) -> PyResult<Self> {
        let mut cfg = ModelConfig::with_dim(dim);
        cfg.layers = layers;
        cfg.heads = heads;
        cfg.temperature = temperature;
        let params = ModelParams::init(&schema.inner, cfg, seed).map_err(py_err)?;
        Ok(Self {
            params,
            schema: schema.inner.clone(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, schema: &PySchema) -> PyResult<Self> {
        let (params, _) = load_checkpoint(&path, &schema.inner).map_err(py_err)?;
        Ok(Self {
            params,
            schema: schema.inner.clone(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.params, &self.schema).map_err(py_err)
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.params.n_scalars()
    }

    /// Click probability for each row under the given inference mode.
    #[pyo3(signature = (tokens, mode_name="sgctr", steps=5, schedule="cosine", cache=false))]
    fn predict(
        &self,
        py: Python<'_>,
        tokens: Vec<Vec<u32>>,
        mode_name: &str,
        steps: usize,
        schedule: &str,
        cache: bool,
    ) -> PyResult<Vec<f64>> {
        let m = mode(mode_name, steps, schedule)?;
        let rows: Vec<EncodedSample> = tokens.into_iter().map(|t| EncodedSample::new(t, 0)).collect();
        py.detach(|| {
            let refiner = Refiner::new(&self.params).cached(cache);
            rows.iter().map(|s| refiner.infer(s, &self.schema, m)).collect::<Result<Vec<_>, _>>()
        })
        .map_err(py_err)
    }

    /// Per-step refinement record of one row: a list of
    /// `(step, l_t, masked_positions, confidences)` plus final weights
    /// (`None` for user-side fields).
    #[pyo3(signature = (tokens, steps=5, schedule="cosine"))]
    fn refine_trace(
        &self,
        tokens: Vec<u32>,
        steps: usize,
        schedule: &str,
    ) -> PyResult<(Vec<(usize, usize, Vec<usize>, Vec<f64>)>, Vec<Option<f64>>)> {
        let m = mode("sgctr", steps, schedule)?;
        let (_, state) = Refiner::new(&self.params)
            .infer_with_state(&EncodedSample::new(tokens, 0), &self.schema, m)
            .map_err(py_err)?;
        let state = state.expect("refining mode returns a state");
        let trace = state
            .trace()
            .iter()
            .map(|t| (t.step, t.l_t, t.masked.clone(), t.confidences.clone()))
            .collect();
        let weights = state
            .status()
            .iter()
            .map(|s| match s {
                PositionStatus::Retained { weight, .. } => Some(*weight),
                _ => None,
            })
            .collect();
        Ok((trace, weights))
    }

    /// Top-1 accuracy of recovering field `k` with it and the label masked.
    fn recovery(&self, tokens: Vec<Vec<u32>>, labels: Vec<u8>, k: usize) -> PyResult<f64> {
        let data = Dataset::new(samples(tokens, labels)?);
        masked_recovery(&self.params, &self.schema, &data, k).map_err(py_err)
    }
}

/// Trains a model; returns it with the per-step loss trace.
#[pyfunction]
#[pyo3(signature = (schema, tokens, labels, dim=32, layers=2, heads=2, temperature=0.07, epochs=3, batch_size=256, lr=3e-3, alpha=10.0, mask_mode="diffusion", seed=1))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    schema: &PySchema,
    tokens: Vec<Vec<u32>>,
    labels: Vec<u8>,
    dim: usize,
    layers: usize,
    heads: usize,
    temperature: f64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    alpha: f64,
    mask_mode: &str,
    seed: u64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let mut model = ModelConfig::with_dim(dim);
    model.layers = layers;
    model.heads = heads;
    model.temperature = temperature;
    let cfg = TrainConfig {
        model,
        epochs,
        batch_size,
        lr,
        alpha,
        masking: mask_mode.parse::<MaskingMode>().map_err(py_err)?,
        seed,
        ..TrainConfig::default()
    };
    let data = samples(tokens, labels)?;
    let result = py.detach(|| core_fit(&data, &schema.inner, &cfg)).map_err(py_err)?;
    let losses = result.trace.iter().map(|r| r.loss).collect();
    Ok((
        PyModel {
            params: result.params,
            schema: schema.inner.clone(),
        },
        losses,
    ))
}

/// Synthetic click data. Returns a dict with `schema`, `train`, `test` and
/// `test_corrupted` (each a `(tokens, labels)` pair), `corrupted` (per-row
/// position flags) and `oracle` (process description).
#[pyfunction]
#[pyo3(signature = (n_train=20_000, n_test=4_000, seed=7, n_user=3, n_item=3, n_cross=2, clusters=4, buckets=40, purity=0.8, dependency_strength=1.0, label_noise=0.0, corruption_rate=0.3))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    n_train: usize,
    n_test: usize,
    seed: u64,
    n_user: usize,
    n_item: usize,
    n_cross: usize,
    clusters: usize,
    buckets: u32,
    purity: f64,
    dependency_strength: f64,
    label_noise: f64,
    corruption_rate: f64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let cfg = SynthConfig {
        n_user,
        n_item,
        n_cross,
        clusters,
        buckets,
        purity,
        dependency_strength,
        label_noise,
        corruption_rate,
        n_train,
        n_test,
        seed,
    };
    let data = synth_generate(&cfg).map_err(py_err)?;
    let corrupted = corrupt_dataset(&data.test, &data.schema, corruption_rate, seed ^ CORRUPTION_STREAM);
    let d = pyo3::types::PyDict::new(py);
    d.set_item("schema", PySchema { inner: data.schema.clone() })?;
    d.set_item("train", unpack(&data.train))?;
    d.set_item("test", unpack(&data.test))?;
    d.set_item("test_corrupted", unpack(&corrupted))?;
    d.set_item("corrupted", corrupted.corruption.clone().unwrap_or_default())?;
    d.set_item("oracle", data.oracle.describe())?;
    Ok(d.unbind())
}

/// Rank-based ROC AUC with ties counted half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    core_auc(&scores, &labels).map_err(py_err)
}

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
#[pyfunction]
fn logloss(probs: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    core_logloss(&probs, &labels).map_err(py_err)
}

/// Fraction of initially masked fields still masked at progress `r`.
#[pyfunction]
fn gamma(schedule: &str, r: f64) -> PyResult<f64> {
    let kind: MaskScheduleKind = schedule.parse().map_err(py_err)?;
    core_gamma(kind, r).map_err(py_err)
}

/// Token id of a raw categorical value (0 for missing).
#[pyfunction]
fn hash_encode(field: &str, raw: &str, vocab_size: u32) -> u32 {
    sgctr_core::hash::hash_encode(field, raw, vocab_size)
}

#[pymodule]
fn sgctr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchema>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(logloss, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(hash_encode, m)?)?;
    Ok(())
}
