//! Checkpoint directory: `meta.txt` (key=value), `manifest.txt` (one line per
//! tensor: `name file rows cols`) and one little-endian f32 file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

use super::params::{ModelConfig, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub schema_hash: u64,
    pub config: ModelConfig,
    pub n_features: usize,
}

fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn save_checkpoint(dir: &Path, params: &ModelParams, schema: &FeatureSchema) -> Result<()> {
    params.matches_schema(schema)?;
    fs::create_dir_all(dir)?;
    let c = &params.config;
    let meta = format!(
        "version={CHECKPOINT_VERSION}\nschema_hash={:016x}\nd={}\nlayers={}\nheads={}\nffn_hidden={}\ntemperature={}\nn_features={}\nmanifest=manifest.txt\n",
        schema.hash(),
        c.d,
        c.layers,
        c.heads,
        c.ffn_hidden,
        c.temperature,
        params.n_features()
    );
    let mut manifest = String::new();
    for (name, t) in params.named_tensors() {
        let file = format!("{name}.f32");
        let bytes: Vec<u8> = t.data.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        manifest.push_str(&format!("{name} {file} {} {}\n", t.rows, t.cols));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let text = fs::read_to_string(dir.join("meta.txt"))?;
    let kv = parse_kv(&text);
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::Data(format!("checkpoint meta missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Data(format!("checkpoint meta `{k}` is not a number")))
    };
    let version: u32 = num("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let schema_hash = u64::from_str_radix(get("schema_hash")?, 16)
        .map_err(|_| Error::Data("bad schema_hash in checkpoint meta".into()))?;
    let temperature: f64 = get("temperature")?
        .parse()
        .map_err(|_| Error::Data("bad temperature in checkpoint meta".into()))?;
    Ok(CheckpointMeta {
        version,
        schema_hash,
        config: ModelConfig {
            d: num("d")?,
            layers: num("layers")?,
            heads: num("heads")?,
            ffn_hidden: num("ffn_hidden")?,
            temperature,
        },
        n_features: num("n_features")?,
    })
}

/// Loads a checkpoint, refusing it when it was trained for another schema.
pub fn load_checkpoint(dir: &Path, schema: &FeatureSchema) -> Result<(ModelParams, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    if meta.schema_hash != schema.hash() {
        return Err(Error::Config(format!(
            "checkpoint schema hash {:016x} does not match schema hash {:016x}",
            meta.schema_hash,
            schema.hash()
        )));
    }
    // Shapes come from an initialized model; values from the files.
    let mut params = ModelParams::init(schema, meta.config, 0)?;
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let entries: BTreeMap<&str, (&str, usize, usize)> = manifest
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let p: Vec<&str> = l.split_whitespace().collect();
            if p.len() != 4 {
                return Err(Error::Data(format!("bad manifest line `{l}`")));
            }
            let rows = p[2].parse().map_err(|_| Error::Data(format!("bad rows in `{l}`")))?;
            let cols = p[3].parse().map_err(|_| Error::Data(format!("bad cols in `{l}`")))?;
            Ok((p[0], (p[1], rows, cols)))
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if entries.len() != names.len() {
        return Err(Error::Data(format!(
            "manifest lists {} tensors, model expects {}",
            entries.len(),
            names.len()
        )));
    }
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let (file, rows, cols) = entries
            .get(name.as_str())
            .ok_or_else(|| Error::Data(format!("manifest is missing tensor `{name}`")))?;
        if (*rows, *cols) != (t.rows, t.cols) {
            return Err(Error::Data(format!(
                "tensor `{name}` is {rows}x{cols} in the checkpoint, schema needs {}x{}",
                t.rows, t.cols
            )));
        }
        let bytes = fs::read(dir.join(file))?;
        if bytes.len() != 4 * t.data.len() {
            return Err(Error::Data(format!("tensor file `{file}` has {} bytes", bytes.len())));
        }
        for (x, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        }
    }
    params.check_finite()?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(b: u32) -> FeatureSchema {
        FeatureSchema::parse(&format!(
            "field u role=user buckets={b}\nfield i role=item buckets=7\nfield y role=label buckets=2\n"
        ))
        .unwrap()
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let s = schema(5);
        let mut p = ModelParams::init(&s, ModelConfig::with_dim(8), 3).unwrap();
        save_checkpoint(dir.path(), &p, &s).unwrap();
        let (loaded, meta) = load_checkpoint(dir.path(), &s).unwrap();
        assert_eq!(meta.config, p.config);
        p.round_to_f32();
        assert_eq!(loaded, p);
    }

    #[test]
    fn refuses_other_schema() {
        let dir = tempfile::tempdir().unwrap();
        let s = schema(5);
        let p = ModelParams::init(&s, ModelConfig::with_dim(8), 3).unwrap();
        save_checkpoint(dir.path(), &p, &s).unwrap();
        let err = load_checkpoint(dir.path(), &schema(6)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("{:016x}", s.hash())), "{msg}");
        assert!(msg.contains(&format!("{:016x}", schema(6).hash())), "{msg}");
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = schema(5);
        let p = ModelParams::init(&s, ModelConfig::with_dim(8), 3).unwrap();
        save_checkpoint(dir.path(), &p, &s).unwrap();
        std::fs::write(dir.path().join("output_proj.f32"), [0u8; 8]).unwrap();
        assert!(matches!(load_checkpoint(dir.path(), &s), Err(Error::Data(_))));
    }
}
