//! Feature schemas and the plain-text schema grammar.
//!
//! One field per line:
//!
//! ```text
//! # comment
//! field user_id role=user buckets=1000
//! field item_id role=item buckets=5000 encoding=id
//! field clicked role=label buckets=2
//! ```
//!
//! `buckets` is the number of hash buckets; the vocabulary adds one reserved
//! id (0, missing). `encoding=hash` (default) hashes raw strings, while
//! `encoding=id` reads cells as integer token ids directly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldRole {
    User,
    Item,
    Cross,
    Label,
}

impl FieldRole {
    pub fn is_maskable(self) -> bool {
        matches!(self, FieldRole::Item | FieldRole::Cross)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldRole::User => "user",
            FieldRole::Item => "item",
            FieldRole::Cross => "cross",
            FieldRole::Label => "label",
        }
    }
}

impl FromStr for FieldRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(FieldRole::User),
            "item" => Ok(FieldRole::Item),
            "cross" => Ok(FieldRole::Cross),
            "label" => Ok(FieldRole::Label),
            other => Err(Error::Config(format!(
                "unknown role `{other}` (expected user|item|cross|label)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Encoding {
    #[default]
    Hash,
    Id,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub name: String,
    pub role: FieldRole,
    pub vocab_size: u32,
    pub encoding: Encoding,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, role: FieldRole, buckets: u32) -> Self {
        Self {
            name: name.into(),
            role,
            vocab_size: buckets + 1,
            encoding: Encoding::Hash,
        }
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn buckets(&self) -> u32 {
        self.vocab_size - 1
    }
}

/// Ordered field list. The order of the non-label fields is the canonical
/// position index used by samples and by the model; the label occupies the
/// extra position after the last feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    fields: Vec<FieldSpec>,
    features: Vec<usize>,
    label: usize,
}

impl FeatureSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let mut label = None;
        let mut features = Vec::new();
        for (i, f) in fields.iter().enumerate() {
            if f.vocab_size < 2 {
                return Err(Error::Config(format!(
                    "field `{}` needs at least one bucket",
                    f.name
                )));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Config(format!("duplicate field `{}`", f.name)));
            }
            if f.role == FieldRole::Label {
                if label.replace(i).is_some() {
                    return Err(Error::Config("more than one label field".into()));
                }
                if f.vocab_size != 3 {
                    return Err(Error::Config(format!(
                        "label field `{}` must have buckets=2",
                        f.name
                    )));
                }
            } else {
                features.push(i);
            }
        }
        let label = label.ok_or_else(|| Error::Config("schema has no label field".into()))?;
        if features.is_empty() {
            return Err(Error::Config("schema has no feature fields".into()));
        }
        Ok(Self {
            fields,
            features,
            label,
        })
    }

    /// Parses the line-oriented schema grammar described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Config(format!("schema line {}: {reason}", lineno + 1));
            let mut parts = line.split_whitespace();
            if parts.next() != Some("field") {
                return Err(bad("expected `field <name> role=<role> buckets=<n>`".into()));
            }
            let name = parts.next().ok_or_else(|| bad("missing field name".into()))?;
            let (mut role, mut buckets, mut encoding) = (None, None, Encoding::Hash);
            for kv in parts {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected key=value, got `{kv}`")))?;
                match k {
                    "role" => role = Some(v.parse::<FieldRole>()?),
                    "buckets" => {
                        let n: u32 = v.parse().map_err(|_| bad(format!("bad bucket count `{v}`")))?;
                        if n == 0 || n == u32::MAX {
                            return Err(bad(format!("bucket count out of range `{v}`")));
                        }
                        buckets = Some(n);
                    }
                    "encoding" => {
                        encoding = match v {
                            "hash" => Encoding::Hash,
                            "id" => Encoding::Id,
                            _ => return Err(bad(format!("unknown encoding `{v}`"))),
                        }
                    }
                    _ => return Err(bad(format!("unknown attribute `{k}`"))),
                }
            }
            let role = role.ok_or_else(|| bad("missing role=".into()))?;
            let buckets = buckets.ok_or_else(|| bad("missing buckets=".into()))?;
            fields.push(FieldSpec::new(name, role, buckets).with_encoding(encoding));
        }
        Self::new(fields)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// Stable fingerprint of the canonical text form.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// All fields in declaration order, label included.
    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    /// The `k`-th non-label field.
    pub fn feature(&self, k: usize) -> &FieldSpec {
        &self.fields[self.features[k]]
    }

    pub fn features(&self) -> impl Iterator<Item = &FieldSpec> + '_ {
        self.features.iter().map(move |&i| &self.fields[i])
    }

    pub fn label(&self) -> &FieldSpec {
        &self.fields[self.label]
    }

    /// Index of the label in declaration order.
    pub fn label_column(&self) -> usize {
        self.label
    }

    /// Declaration index of feature `k`.
    pub fn feature_column(&self, k: usize) -> usize {
        self.features[k]
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Number of model positions: every feature plus the label slot.
    pub fn n_positions(&self) -> usize {
        self.features.len() + 1
    }

    pub fn label_position(&self) -> usize {
        self.features.len()
    }

    pub fn count_role(&self, role: FieldRole) -> usize {
        self.features().filter(|f| f.role == role).count()
    }

    pub fn n_user(&self) -> usize {
        self.count_role(FieldRole::User)
    }

    pub fn n_item(&self) -> usize {
        self.count_role(FieldRole::Item)
    }

    pub fn n_cross(&self) -> usize {
        self.count_role(FieldRole::Cross)
    }

    /// Fields masked at the start of inference (item and cross).
    pub fn n_maskable(&self) -> usize {
        self.n_item() + self.n_cross()
    }

    pub fn vocab_sizes(&self) -> Vec<u32> {
        self.features().map(|f| f.vocab_size).collect()
    }

    pub fn position_of(&self, name: &str) -> Option<usize> {
        self.features().position(|f| f.name == name)
    }

    /// Default Criteo layout: `I1..I13` bucketed integers, `C1..C26` hashed
    /// categoricals. The public logs are anonymized, so the user/item split is
    /// a convention (integers as user-side, categoricals as item-side).
    pub fn criteo(int_buckets: u32, cat_buckets: u32) -> Result<Self> {
        let mut fields = vec![FieldSpec::new("label", FieldRole::Label, 2)];
        fields.extend((1..=13).map(|i| FieldSpec::new(format!("I{i}"), FieldRole::User, int_buckets)));
        fields.extend((1..=26).map(|i| FieldSpec::new(format!("C{i}"), FieldRole::Item, cat_buckets)));
        Self::new(fields)
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for field in &self.fields {
            write!(
                f,
                "field {} role={} buckets={}",
                field.name,
                field.role.as_str(),
                field.buckets()
            )?;
            if field.encoding == Encoding::Id {
                write!(f, " encoding=id")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
# demo
field u0 role=user buckets=10
field u1 role=user buckets=10
field i0 role=item buckets=20 encoding=id
field y role=label buckets=2
field x0 role=cross buckets=5
";

    #[test]
    fn parses_and_counts() {
        let s = FeatureSchema::parse(TEXT).unwrap();
        assert_eq!(s.n_features(), 4);
        assert_eq!(s.n_positions(), 5);
        assert_eq!((s.n_user(), s.n_item(), s.n_cross()), (2, 1, 1));
        assert_eq!(s.n_maskable(), 2);
        assert_eq!(s.feature(3).name, "x0");
        assert_eq!(s.feature(2).encoding, Encoding::Id);
        assert_eq!(s.label().vocab_size, 3);
        assert_eq!(s.label_column(), 3);
    }

    #[test]
    fn text_round_trip_preserves_hash() {
        let s = FeatureSchema::parse(TEXT).unwrap();
        let again = FeatureSchema::parse(&s.to_text()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.hash(), again.hash());
    }

    #[test]
    fn rejects_bad_schemas() {
        assert!(FeatureSchema::parse("field a role=user buckets=3").is_err());
        assert!(FeatureSchema::parse("field y role=label buckets=2").is_err());
        assert!(FeatureSchema::parse(
            "field y role=label buckets=3\nfield a role=user buckets=3"
        )
        .is_err());
        assert!(FeatureSchema::parse(
            "field y role=label buckets=2\nfield y2 role=label buckets=2\nfield a role=user buckets=3"
        )
        .is_err());
        assert!(FeatureSchema::parse("field a role=alien buckets=3").is_err());
        assert!(FeatureSchema::parse("field a role=user").is_err());
    }

    #[test]
    fn criteo_layout() {
        let s = FeatureSchema::criteo(64, 1000).unwrap();
        assert_eq!(s.n_features(), 39);
        assert_eq!(s.feature(0).name, "I1");
        assert_eq!(s.feature(13).name, "C1");
    }
}
