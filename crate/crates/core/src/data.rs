//! Encoded samples and dataset ingestion.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hash::hash_encode;
use crate::schema::{Encoding, FeatureSchema};

/// One impression: a token per non-label field plus the binary label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedSample {
    pub tokens: Vec<u32>,
    pub label: u8,
}

impl EncodedSample {
    pub fn new(tokens: Vec<u32>, label: u8) -> Self {
        Self { tokens, label }
    }

    pub fn check(&self, schema: &FeatureSchema) -> Result<()> {
        if self.tokens.len() != schema.n_features() {
            return Err(Error::Data(format!(
                "sample has {} tokens, schema has {} features",
                self.tokens.len(),
                schema.n_features()
            )));
        }
        for (k, (&tok, f)) in self.tokens.iter().zip(schema.features()).enumerate() {
            if tok >= f.vocab_size {
                return Err(Error::Data(format!(
                    "token {tok} out of range for field {k} (`{}`, vocab {})",
                    f.name, f.vocab_size
                )));
            }
        }
        if self.label > 1 {
            return Err(Error::Data(format!("label {} is not binary", self.label)));
        }
        Ok(())
    }
}

/// A list of samples, optionally carrying per-position corruption flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<EncodedSample>,
    pub corruption: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn new(samples: Vec<EncodedSample>) -> Self {
        Self {
            samples,
            corruption: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Whether sample `i` had any position corrupted.
    pub fn is_corrupted(&self, i: usize) -> Option<bool> {
        self.corruption.as_ref().map(|c| c[i].iter().any(|&b| b))
    }

    /// Derives corruption flags by comparing against the clean version of the
    /// same rows. A position resampled to its original token is not flagged.
    pub fn mark_corruption_against(&mut self, clean: &Dataset) -> Result<()> {
        if clean.len() != self.len() {
            return Err(Error::Data(format!(
                "clean reference has {} rows, dataset has {}",
                clean.len(),
                self.len()
            )));
        }
        let flags = self
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(a, b)| a.tokens.iter().zip(&b.tokens).map(|(x, y)| x != y).collect())
            .collect();
        self.corruption = Some(flags);
        Ok(())
    }
}

/// Bucket for a Criteo integer feature: 0 when missing, a dedicated top bucket
/// for negatives, otherwise `floor(ln(v+1)^2) + 1` clamped below it.
pub fn bucket_integer(raw: &str, vocab_size: u32) -> std::result::Result<u32, String> {
    if raw.is_empty() {
        return Ok(0);
    }
    let v: i64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("integer feature `{raw}` is not an integer"))?;
    let negative_bucket = vocab_size - 1;
    let max_regular = negative_bucket.saturating_sub(1).max(1);
    if v < 0 {
        return Ok(negative_bucket);
    }
    let l = ((v as f64) + 1.0).ln();
    let b = (l * l).floor() + 1.0;
    Ok(if b >= max_regular as f64 { max_regular } else { b as u32 })
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

fn encode_cell(schema: &FeatureSchema, k: usize, raw: &str) -> std::result::Result<u32, String> {
    let f = schema.feature(k);
    match f.encoding {
        Encoding::Hash => Ok(hash_encode(&f.name, raw, f.vocab_size)),
        Encoding::Id => {
            if raw.is_empty() {
                return Ok(0);
            }
            let id: u32 = raw
                .trim()
                .parse()
                .map_err(|_| format!("field `{}`: `{raw}` is not a token id", f.name))?;
            if id >= f.vocab_size {
                return Err(format!(
                    "field `{}`: token id {id} exceeds vocab {}",
                    f.name, f.vocab_size
                ));
            }
            Ok(id)
        }
    }
}

/// Parses one Criteo line: `label \t I1..I13 \t C1..C26`.
///
/// The first 13 features of `schema` are treated as integer features; the
/// remaining 26 go through the field's own encoding.
pub fn parse_criteo_line(line: &str, line_no: usize, schema: &FeatureSchema) -> Result<EncodedSample> {
    let bad = |reason: String| Error::Parse { line: line_no, reason };
    if schema.n_features() != 39 {
        return Err(Error::Config(format!(
            "criteo schema needs 39 feature fields, got {}",
            schema.n_features()
        )));
    }
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 40 {
        return Err(bad(format!("expected 40 tab-separated columns, found {}", cols.len())));
    }
    let label = parse_label(cols[0]).ok_or_else(|| bad(format!("label `{}` is not 0/1", cols[0])))?;
    let mut tokens = Vec::with_capacity(39);
    for (k, raw) in cols[1..].iter().enumerate() {
        let tok = if k < 13 {
            bucket_integer(raw, schema.feature(k).vocab_size)
        } else {
            encode_cell(schema, k, raw)
        };
        tokens.push(tok.map_err(bad)?);
    }
    Ok(EncodedSample { tokens, label })
}

/// Result of reading a Criteo file: parsed samples plus rejected line numbers.
#[derive(Debug, Default)]
pub struct CriteoRead {
    pub dataset: Dataset,
    pub rejected: Vec<usize>,
}

pub fn read_criteo<R: std::io::BufRead>(reader: R, schema: &FeatureSchema) -> Result<CriteoRead> {
    let mut out = CriteoRead::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_criteo_line(&line, i + 1, schema) {
            Ok(s) => out.dataset.samples.push(s),
            Err(Error::Parse { line, .. }) => out.rejected.push(line),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Serializes a sample as a Criteo line, writing token ids as raw values.
/// Only id-encoded categorical fields survive a parse round trip unchanged.
pub fn criteo_line(sample: &EncodedSample) -> String {
    let mut line = sample.label.to_string();
    for tok in &sample.tokens {
        line.push('\t');
        if *tok != 0 {
            line.push_str(&tok.to_string());
        }
    }
    line
}

/// Reads a generic headered CSV. Columns may appear in any order; every
/// schema field must be present and no unknown column is allowed.
pub fn parse_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let by_name: HashMap<&str, usize> = schema
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    // column -> declaration index
    let mut column_field = Vec::with_capacity(header.len());
    for name in header.iter() {
        let idx = by_name
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown column `{name}` not in schema")))?;
        if column_field.contains(idx) {
            return Err(Error::Config(format!("duplicate column `{name}`")));
        }
        column_field.push(*idx);
    }
    let label_col = column_field
        .iter()
        .position(|&i| i == schema.label_column())
        .ok_or_else(|| Error::Config(format!("missing label column `{}`", schema.label().name)))?;
    let mut feature_col = vec![usize::MAX; schema.n_features()];
    for k in 0..schema.n_features() {
        let decl = schema.feature_column(k);
        feature_col[k] = column_field.iter().position(|&i| i == decl).ok_or_else(|| {
            Error::Config(format!("missing column for field `{}`", schema.feature(k).name))
        })?;
    }

    let mut samples = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row_idx + 2);
        let bad = |reason: String| Error::Parse { line, reason };
        let label_raw = &record[label_col];
        let label = parse_label(label_raw).ok_or_else(|| bad(format!("label `{label_raw}` is not 0/1")))?;
        let tokens = feature_col
            .iter()
            .enumerate()
            .map(|(k, &c)| encode_cell(schema, k, &record[c]).map_err(bad))
            .collect::<Result<Vec<_>>>()?;
        samples.push(EncodedSample { tokens, label });
    }
    Ok(Dataset::new(samples))
}

/// Writes samples as a generic CSV in schema declaration order, with token
/// ids as cell values (readable back through `encoding=id` fields).
pub fn write_csv<W: Write>(writer: W, schema: &FeatureSchema, samples: &[EncodedSample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(schema.fields().iter().map(|f| f.name.as_str()))?;
    let n = schema.fields().len();
    let mut decl_to_feature = vec![None; n];
    for k in 0..schema.n_features() {
        decl_to_feature[schema.feature_column(k)] = Some(k);
    }
    let mut row = Vec::with_capacity(n);
    for s in samples {
        row.clear();
        for slot in &decl_to_feature {
            row.push(match slot {
                Some(k) => s.tokens[*k].to_string(),
                None => s.label.to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
