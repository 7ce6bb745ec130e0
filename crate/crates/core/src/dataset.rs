//! Precomputed per-claim feature vectors and replication outcomes.
//!
//! Files are UTF-8 CSV preceded by a `#schema-v1` comment line. The first
//! column is `claimId`, the last is `outcome` (`1`, `0` or empty for
//! unknown). Columns named `meta.<key>` carry display-only metadata. Every
//! other column must be a feature named in the [`FeatureSchema`], in any
//! order.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lmsr::logistic;
use crate::market::Outcome;

pub const SCHEMA_VERSION_LINE: &str = "#schema-v1";
pub const DEFAULT_FEATURE_COUNT: usize = 41;

const CLAIM_COLUMN: &str = "claimId";
const OUTCOME_COLUMN: &str = "outcome";
const META_PREFIX: &str = "meta.";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("malformed row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("unsupported format version line {0:?}")]
    UnsupportedVersion(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("schema has no fitted normalization statistics")]
    UnfittedSchema,
    #[error("record {0} is already normalized")]
    AlreadyNormalized(String),
    #[error("record {0} is not normalized")]
    NotNormalized(String),
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Binary,
}

impl FeatureKind {
    fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std_dev: f64,
    /// Zero spread (or a single record); passed through unscaled.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    stats: Option<Vec<FeatureStats>>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>) -> Result<Self, DatasetError> {
        if names.len() != kinds.len() {
            return Err(DatasetError::DimensionMismatch {
                expected: names.len(),
                actual: kinds.len(),
            });
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::DuplicateFeature(n.clone()));
            }
        }
        Ok(Self { names, kinds, stats: None })
    }

    /// The shipped 41-feature schema. The five named features come first;
    /// the rest are placeholders until the full list is published.
    pub fn default_schema() -> Self {
        let mut names: Vec<String> = ["p_value", "author_names_hash", "author_count", "venue", "funding_flag"]
            .into_iter()
            .map(String::from)
            .collect();
        names.extend((names.len() + 1..=DEFAULT_FEATURE_COUNT).map(|i| format!("feature_{i:02}")));
        let kinds = names
            .iter()
            .map(|n| if n == "funding_flag" { FeatureKind::Binary } else { FeatureKind::Numeric })
            .collect();
        Self::new(names, kinds).expect("default names are unique")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn stats(&self) -> Option<&[FeatureStats]> {
        self.stats.as_deref()
    }

    pub fn is_fitted(&self) -> bool {
        self.stats.is_some()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Hex digest of the ordered names and kinds. Pools trained on one schema
    /// are only usable on data with the same hash.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (n, k) in self.names.iter().zip(&self.kinds) {
            h.update(n.as_bytes());
            h.update(b":");
            h.update(k.as_str().as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SCHEMA_VERSION_LINE}")?;
        for (i, (n, k)) in self.names.iter().zip(&self.kinds).enumerate() {
            match &self.stats {
                Some(st) => {
                    let s = st[i];
                    writeln!(w, "{n},{},{},{},{}", k.as_str(), s.mean, s.std_dev, u8::from(s.constant))?
                }
                None => writeln!(w, "{n},{}", k.as_str())?,
            }
        }
        Ok(())
    }

    /// Reads a schema file. Lines are `name,kind` or, for a fitted schema,
    /// `name,kind,mean,stdDev,constant`.
    pub fn read<R: BufRead>(r: R) -> Result<Self, DatasetError> {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut stats = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != SCHEMA_VERSION_LINE {
                    return Err(DatasetError::UnsupportedVersion(line.to_string()));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let malformed = |detail: String| DatasetError::MalformedRow { row: i + 1, detail };
            let (name, kind) = (cells[0], cells.get(1).copied().unwrap_or("numeric"));
            match cells.len() {
                1 | 2 => {}
                5 => {
                    let num = |c: &str| c.parse::<f64>().map_err(|_| malformed(format!("bad number {c:?}")));
                    stats.push(FeatureStats {
                        mean: num(cells[2])?,
                        std_dev: num(cells[3])?,
                        constant: cells[4] == "1",
                    });
                }
                n => return Err(malformed(format!("expected 2 or 5 fields, got {n}"))),
            }
            let kind = match kind {
                "numeric" => FeatureKind::Numeric,
                "binary" => FeatureKind::Binary,
                other => {
                    return Err(DatasetError::MalformedRow {
                        row: i + 1,
                        detail: format!("unknown feature kind {other:?}"),
                    })
                }
            };
            names.push(name.to_string());
            kinds.push(kind);
        }
        let mut schema = Self::new(names, kinds)?;
        if !stats.is_empty() {
            if stats.len() != schema.dim() {
                return Err(DatasetError::SchemaMismatch("normalization stats given for only some features".into()));
            }
            schema.stats = Some(stats);
        }
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        self.write(File::create(path)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub claim_id: String,
    pub features: Vec<f64>,
    pub outcome: Option<Outcome>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    /// Indices of features filled in by mean imputation.
    #[serde(default)]
    pub imputed: Vec<usize>,
    #[serde(default)]
    pub normalized: bool,
}

impl PaperRecord {
    pub fn new(claim_id: impl Into<String>, features: Vec<f64>, outcome: Option<Outcome>) -> Self {
        Self {
            claim_id: claim_id.into(),
            features,
            outcome,
            meta: BTreeMap::new(),
            imputed: Vec::new(),
            normalized: false,
        }
    }

    /// Copy with the outcome removed, for surfaces that must not leak it.
    pub fn without_outcome(&self) -> Self {
        Self {
            outcome: None,
            ..self.clone()
        }
    }
}

fn parse_outcome(cell: &str, row: usize) -> Result<Option<Outcome>, DatasetError> {
    match cell.trim() {
        "" => Ok(None),
        "1" => Ok(Some(Outcome::Replicated)),
        "0" => Ok(Some(Outcome::NotReplicated)),
        other => Err(DatasetError::MalformedRow {
            row,
            detail: format!("outcome must be 1, 0 or empty, got {other:?}"),
        }),
    }
}

fn outcome_cell(outcome: Option<Outcome>) -> &'static str {
    match outcome {
        Some(Outcome::Replicated) => "1",
        Some(Outcome::NotReplicated) => "0",
        None => "",
    }
}

/// Reads a dataset. Blank feature cells are imputed with the fitted schema
/// mean when available, otherwise with the mean of the column in this file.
pub fn read_dataset<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<PaperRecord>, DatasetError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let header_line = if first.trim_start().starts_with('#') {
        if first.trim() != SCHEMA_VERSION_LINE {
            return Err(DatasetError::UnsupportedVersion(first.trim().to_string()));
        }
        None
    } else {
        Some(first)
    };
    let rest: Box<dyn Read> = match header_line {
        Some(h) => Box::new(std::io::Cursor::new(h.into_bytes()).chain(buf)),
        None => Box::new(buf),
    };
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(rest);
    let headers = csv.headers()?.clone();

    let mut claim_col = None;
    let mut outcome_col = None;
    let mut meta_cols = Vec::new();
    let mut feature_cols = vec![None; schema.dim()];
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h == CLAIM_COLUMN {
            claim_col = Some(i);
        } else if h == OUTCOME_COLUMN {
            outcome_col = Some(i);
        } else if let Some(key) = h.strip_prefix(META_PREFIX) {
            meta_cols.push((i, key.to_string()));
        } else if let Some(f) = schema.index_of(h) {
            if feature_cols[f].replace(i).is_some() {
                return Err(DatasetError::SchemaMismatch(format!("duplicate column {h:?}")));
            }
        } else {
            return Err(DatasetError::SchemaMismatch(format!("unknown column {h:?}")));
        }
    }
    let claim_col = claim_col.ok_or_else(|| DatasetError::SchemaMismatch("missing claimId column".into()))?;
    let missing: Vec<&str> = feature_cols
        .iter()
        .zip(schema.names())
        .filter(|(c, _)| c.is_none())
        .map(|(_, n)| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::SchemaMismatch(format!("missing columns {missing:?}")));
    }
    let feature_cols: Vec<usize> = feature_cols.into_iter().map(|c| c.expect("checked")).collect();

    let mut raw: Vec<(PaperRecord, Vec<bool>)> = Vec::new();
    for (n, row) in csv.records().enumerate() {
        // header is line 1 after the version line
        let row_no = n + 2;
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let mut features = Vec::with_capacity(schema.dim());
        let mut blank = Vec::with_capacity(schema.dim());
        for (f, &col) in feature_cols.iter().enumerate() {
            let text = cell(col).trim();
            if text.is_empty() {
                features.push(f64::NAN);
                blank.push(true);
                continue;
            }
            let v: f64 = text.parse().map_err(|_| DatasetError::MalformedRow {
                row: row_no,
                detail: format!("non-numeric value {text:?} in column {:?}", schema.names()[f]),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::MalformedRow {
                    row: row_no,
                    detail: format!("non-finite value in column {:?}", schema.names()[f]),
                });
            }
            features.push(v);
            blank.push(false);
        }
        let outcome = match outcome_col {
            Some(c) => parse_outcome(cell(c), row_no)?,
            None => None,
        };
        let mut rec = PaperRecord::new(cell(claim_col).to_string(), features, outcome);
        for (i, key) in &meta_cols {
            let v = cell(*i);
            if !v.is_empty() {
                rec.meta.insert(key.clone(), v.to_string());
            }
        }
        raw.push((rec, blank));
    }

    let fill: Vec<f64> = match schema.stats() {
        Some(stats) => stats.iter().map(|s| s.mean).collect(),
        None => (0..schema.dim())
            .map(|f| {
                let present: Vec<f64> = raw.iter().filter(|(_, b)| !b[f]).map(|(r, _)| r.features[f]).collect();
                if present.is_empty() {
                    0.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                }
            })
            .collect(),
    };

    Ok(raw
        .into_iter()
        .map(|(mut rec, blank)| {
            for (f, b) in blank.into_iter().enumerate() {
                if b {
                    rec.features[f] = fill[f];
                    rec.imputed.push(f);
                }
            }
            rec
        })
        .collect())
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<PaperRecord>, DatasetError> {
    read_dataset(File::open(path)?, schema)
}

pub fn write_dataset<W: Write>(mut w: W, records: &[PaperRecord], schema: &FeatureSchema) -> Result<(), DatasetError> {
    writeln!(w, "{SCHEMA_VERSION_LINE}")?;
    let meta_keys: Vec<String> = records
        .iter()
        .flat_map(|r| r.meta.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec![CLAIM_COLUMN.to_string()];
    header.extend(schema.names().iter().cloned());
    header.extend(meta_keys.iter().map(|k| format!("{META_PREFIX}{k}")));
    header.push(OUTCOME_COLUMN.to_string());
    csv.write_record(&header)?;
    for r in records {
        if r.features.len() != schema.dim() {
            return Err(DatasetError::DimensionMismatch {
                expected: schema.dim(),
                actual: r.features.len(),
            });
        }
        let mut row = vec![r.claim_id.clone()];
        // `{}` on f64 prints the shortest representation that parses back exactly
        row.extend(r.features.iter().map(|v| format!("{v}")));
        row.extend(meta_keys.iter().map(|k| r.meta.get(k).cloned().unwrap_or_default()));
        row.push(outcome_cell(r.outcome).to_string());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[PaperRecord], schema: &FeatureSchema) -> Result<(), DatasetError> {
    write_dataset(File::create(path)?, records, schema)
}

/// Per-feature mean and population standard deviation.
pub fn fit_normalization(records: &[PaperRecord], schema: &FeatureSchema) -> Result<FeatureSchema, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = records.len() as f64;
    let mut stats = Vec::with_capacity(schema.dim());
    for f in 0..schema.dim() {
        let mut sum = 0.0;
        for r in records {
            if r.features.len() != schema.dim() {
                return Err(DatasetError::DimensionMismatch {
                    expected: schema.dim(),
                    actual: r.features.len(),
                });
            }
            sum += r.features[f];
        }
        let mean = sum / n;
        let var = records.iter().map(|r| (r.features[f] - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        stats.push(FeatureStats {
            mean,
            std_dev,
            constant: records.len() < 2 || std_dev <= f64::EPSILON * mean.abs().max(1.0),
        });
    }
    Ok(FeatureSchema {
        stats: Some(stats),
        ..schema.clone()
    })
}

fn scaled(schema: &FeatureSchema, f: usize) -> Option<FeatureStats> {
    let s = schema.stats.as_ref()?[f];
    (schema.kinds[f] == FeatureKind::Numeric && !s.constant).then_some(s)
}

/// Maps numeric, non-constant features to z-scores.
pub fn normalize(record: &PaperRecord, schema: &FeatureSchema) -> Result<PaperRecord, DatasetError> {
    if !schema.is_fitted() {
        return Err(DatasetError::UnfittedSchema);
    }
    if record.normalized {
        return Err(DatasetError::AlreadyNormalized(record.claim_id.clone()));
    }
    if record.features.len() != schema.dim() {
        return Err(DatasetError::DimensionMismatch {
            expected: schema.dim(),
            actual: record.features.len(),
        });
    }
    let mut out = record.clone();
    for (f, v) in out.features.iter_mut().enumerate() {
        if let Some(s) = scaled(schema, f) {
            *v = (*v - s.mean) / s.std_dev;
        }
    }
    out.normalized = true;
    Ok(out)
}

pub fn denormalize(record: &PaperRecord, schema: &FeatureSchema) -> Result<PaperRecord, DatasetError> {
    if !schema.is_fitted() {
        return Err(DatasetError::UnfittedSchema);
    }
    if !record.normalized {
        return Err(DatasetError::NotNormalized(record.claim_id.clone()));
    }
    let mut out = record.clone();
    for (f, v) in out.features.iter_mut().enumerate() {
        if let Some(s) = scaled(schema, f) {
            *v = *v * s.std_dev + s.mean;
        }
    }
    out.normalized = false;
    Ok(out)
}

pub fn normalize_all(records: &[PaperRecord], schema: &FeatureSchema) -> Result<Vec<PaperRecord>, DatasetError> {
    records.iter().map(|r| normalize(r, schema)).collect()
}

/// Planted signal of the synthetic generator: (feature index, weight).
/// The first entry dominates; the others can never flip its sign.
pub const PLANTED_FEATURES: [(usize, f64); 3] = [(0, 1.0), (2, 0.4), (7, 0.3)];

/// Label sharpness for a difficulty in (0, 1]; infinite at difficulty 0.
pub fn synthetic_sharpness(difficulty: f64) -> f64 {
    4.0 * (1.0 - difficulty) / difficulty
}

/// Labelled synthetic claims on the default schema.
///
/// The dominant planted feature is `±(1 + |z|)`, the other planted features
/// are uniform on `[-1, 1]`, so the sign of the planted score always equals
/// the sign of the dominant feature. The replication probability is
/// `logistic(k * score)` with `k` from [`synthetic_sharpness`]; difficulty 0
/// gives deterministic labels and difficulty 1 gives coin flips.
pub fn generate_synthetic<R: Rng + ?Sized>(n: usize, difficulty: f64, rng: &mut R) -> Vec<PaperRecord> {
    assert!(n >= 1, "n must be at least 1");
    assert!((0.0..=1.0).contains(&difficulty), "difficulty must lie in [0, 1]");
    let schema = FeatureSchema::default_schema();
    let binary: Vec<bool> = schema.kinds().iter().map(|k| *k == FeatureKind::Binary).collect();
    let (dominant, _) = PLANTED_FEATURES[0];
    (0..n)
        .map(|i| {
            let mut x: Vec<f64> = (0..schema.dim())
                .map(|f| {
                    if binary[f] {
                        if rng.random::<bool>() { 1.0 } else { 0.0 }
                    } else {
                        StandardNormal.sample(rng)
                    }
                })
                .collect();
            let z: f64 = StandardNormal.sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x[dominant] = sign * (1.0 + z.abs());
            for &(f, _) in &PLANTED_FEATURES[1..] {
                x[f] = rng.random_range(-1.0..=1.0);
            }
            let score: f64 = PLANTED_FEATURES.iter().map(|&(f, w)| w * x[f]).sum();
            let u: f64 = rng.random();
            let replicated = if difficulty == 0.0 {
                score > 0.0
            } else {
                u < logistic(synthetic_sharpness(difficulty) * score)
            };
            let outcome = if replicated { Outcome::Replicated } else { Outcome::NotReplicated };
            PaperRecord::new(format!("synth-{i:05}"), x, Some(outcome))
        })
        .collect()
}
