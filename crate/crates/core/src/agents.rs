//! Algorithmic traders.
//!
//! An [`AgentGenome`] is a masked logistic scorer with a cosine-similarity
//! participation gate and a required edge over the market price. Genomes are
//! immutable; cash and holdings live in the market [`Ledger`](crate::market::Ledger).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureSchema;
use crate::lmsr::logistic;
use crate::market::{AssetSide, Direction, Holdings};

pub type AgentId = u64;

/// Upper bound on stored exemplars per genome.
pub const MAX_EXEMPLARS: usize = 16;
/// Default per-iteration agent sampling rate.
pub const DEFAULT_SAMPLING_RATE: f64 = 0.05;

pub const POOL_VERSION: &str = "#pool-v1";

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("feature dimension mismatch: genome has {expected}, features have {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("genome {0} attends to no features")]
    EmptyMask(AgentId),
    #[error("genome {0}: similarity threshold outside [0, 1]")]
    InvalidThreshold(AgentId),
    #[error("genome {0}: margin outside [0, 0.5]")]
    InvalidMargin(AgentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentGenome {
    pub agent_id: AgentId,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
    pub bias: f64,
    pub exemplars: Vec<Vec<f64>>,
    pub similarity_threshold: f64,
    pub margin: f64,
    pub endowment: f64,
}

/// What an agent wants to do this iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub side: AssetSide,
    pub direction: Direction,
}

impl AgentGenome {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.mask.len() != self.weights.len() {
            return Err(AgentError::DimensionMismatch {
                expected: self.weights.len(),
                actual: self.mask.len(),
            });
        }
        if let Some(e) = self.exemplars.iter().find(|e| e.len() != self.dim()) {
            return Err(AgentError::DimensionMismatch {
                expected: self.dim(),
                actual: e.len(),
            });
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(AgentError::EmptyMask(self.agent_id));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(AgentError::InvalidThreshold(self.agent_id));
        }
        if !(0.0..=0.5).contains(&self.margin) {
            return Err(AgentError::InvalidMargin(self.agent_id));
        }
        Ok(())
    }

    fn check_dim(&self, features: &[f64]) -> Result<(), AgentError> {
        if features.len() != self.dim() {
            return Err(AgentError::DimensionMismatch {
                expected: self.dim(),
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Best cosine similarity to any exemplar over masked coordinates, mapped
    /// to `[0, 1]`. An all-zero masked subvector on either side scores 0.
    pub fn similarity(&self, features: &[f64]) -> Result<f64, AgentError> {
        self.check_dim(features)?;
        let norm = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&self.mask)
                .filter(|(_, &m)| m)
                .map(|(x, _)| x * x)
                .sum::<f64>()
                .sqrt()
        };
        let fx = norm(features);
        if fx == 0.0 {
            return Ok(0.0);
        }
        let mut best: f64 = 0.0;
        for ex in &self.exemplars {
            let ne = norm(ex);
            if ne == 0.0 {
                continue;
            }
            let dot: f64 = ex
                .iter()
                .zip(features)
                .zip(&self.mask)
                .filter(|(_, &m)| m)
                .map(|((a, b), _)| a * b)
                .sum();
            let cos = (dot / (fx * ne)).clamp(-1.0, 1.0);
            best = best.max((cos + 1.0) / 2.0);
        }
        Ok(best)
    }

    pub fn should_participate(&self, features: &[f64]) -> Result<bool, AgentError> {
        Ok(self.similarity(features)? >= self.similarity_threshold)
    }

    /// `logistic(bias + sum of masked weight * feature)`.
    pub fn estimate_probability(&self, features: &[f64]) -> Result<f64, AgentError> {
        self.check_dim(features)?;
        let score: f64 = self
            .weights
            .iter()
            .zip(features)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((w, x), _)| w * x)
            .sum();
        Ok(logistic(self.bias + score))
    }

    /// Trade decision given an already-computed estimate. See [`decide`].
    pub fn decide_with_estimate(&self, estimate: f64, price_yes: f64, holdings: Holdings, allow_sell: bool) -> Option<Decision> {
        decide(estimate, price_yes, self.margin, holdings, allow_sell)
    }

    /// Full decision path; the caller is responsible for the participation gate.
    pub fn decide_order(&self, features: &[f64], price_yes: f64) -> Result<Option<Decision>, AgentError> {
        let p = self.estimate_probability(features)?;
        Ok(self.decide_with_estimate(p, price_yes, Holdings::default(), false))
    }
}

/// Buys the side whose own estimate exceeds its price by more than `margin`.
/// With `allow_sell`, an agent holding the overpriced side sells it instead of
/// buying the opposite side.
pub fn decide(estimate: f64, price_yes: f64, margin: f64, holdings: Holdings, allow_sell: bool) -> Option<Decision> {
    let (underpriced, overpriced) = if estimate - price_yes > margin {
        (AssetSide::WillReplicate, AssetSide::WillNotReplicate)
    } else if (1.0 - estimate) - (1.0 - price_yes) > margin {
        (AssetSide::WillNotReplicate, AssetSide::WillReplicate)
    } else {
        return None;
    };
    if allow_sell && holdings.get(overpriced) > 0 {
        Some(Decision {
            side: overpriced,
            direction: Direction::Sell,
        })
    } else {
        Some(Decision {
            side: underpriced,
            direction: Direction::Buy,
        })
    }
}

/// Indices `0..len` each kept independently with probability `rate`,
/// ascending.
///
/// Uses geometric gaps between selected indices, which has the same joint
/// distribution as one Bernoulli draw per index but costs one draw per
/// selected element.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    sample_indices_into(len, rate, rng, &mut out);
    out
}

/// [`sample_indices`] writing into a reusable buffer.
pub fn sample_indices_into<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R, out: &mut Vec<usize>) {
    assert!(rate > 0.0 && rate <= 1.0, "sampling rate must lie in (0, 1]");
    out.clear();
    if rate >= 1.0 {
        out.extend(0..len);
        return;
    }
    let log_q = (-rate).ln_1p();
    let mut i = 0usize;
    loop {
        // u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let gap = (u.ln() / log_q).floor();
        if !gap.is_finite() || gap >= (len - i.min(len)) as f64 {
            break;
        }
        i += gap as usize;
        if i >= len {
            break;
        }
        out.push(i);
        i += 1;
    }
}

/// Agents selected for one iteration, in ascending agent id.
pub fn sample_agents<'a, R: Rng + ?Sized>(pool: &'a [AgentGenome], rate: f64, rng: &mut R) -> Vec<&'a AgentGenome> {
    let mut order: Vec<&AgentGenome> = pool.iter().collect();
    order.sort_by_key(|g| g.agent_id);
    sample_indices(order.len(), rate, rng).into_iter().map(|i| order[i]).collect()
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("pool was trained on schema {pool} but data uses {data}")]
    SchemaMismatch { pool: String, data: String },
    #[error(transparent)]
    Genome(#[from] AgentError),
}

/// A trained population together with the schema it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPool {
    pub schema_fingerprint: String,
    pub feature_dim: usize,
    pub genomes: Vec<AgentGenome>,
}

impl AgentPool {
    pub fn new(schema: &FeatureSchema, mut genomes: Vec<AgentGenome>) -> Self {
        genomes.sort_by_key(|g| g.agent_id);
        Self {
            schema_fingerprint: schema.fingerprint(),
            feature_dim: schema.dim(),
            genomes,
        }
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), PoolError> {
        if self.feature_dim != schema.dim() || self.schema_fingerprint != schema.fingerprint() {
            return Err(PoolError::SchemaMismatch {
                pool: format!("{} ({} features)", self.schema_fingerprint, self.feature_dim),
                data: format!("{} ({} features)", schema.fingerprint(), schema.dim()),
            });
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PoolError> {
        writeln!(
            w,
            "{POOL_VERSION} schema={} features={} count={}",
            self.schema_fingerprint,
            self.feature_dim,
            self.genomes.len()
        )?;
        for g in &self.genomes {
            serde_json::to_writer(&mut w, g).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, PoolError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let mut parts = header.split_whitespace();
        if parts.next() != Some(POOL_VERSION) {
            return Err(PoolError::Format {
                line: 1,
                detail: format!("expected {POOL_VERSION} header"),
            });
        }
        let mut fingerprint = None;
        let mut dim = None;
        let mut count = None;
        for kv in parts {
            match kv.split_once('=') {
                Some(("schema", v)) => fingerprint = Some(v.to_string()),
                Some(("features", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (Some(fingerprint), Some(dim), Some(count)) = (fingerprint, dim, count) else {
            return Err(PoolError::Format {
                line: 1,
                detail: "header needs schema=, features= and count=".into(),
            });
        };
        let mut genomes = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let g: AgentGenome = serde_json::from_str(&line).map_err(|e| PoolError::Format {
                line: i + 2,
                detail: e.to_string(),
            })?;
            if g.dim() != dim {
                return Err(PoolError::Format {
                    line: i + 2,
                    detail: format!("genome has {} weights, header says {dim}", g.dim()),
                });
            }
            g.validate()?;
            genomes.push(g);
        }
        if genomes.len() != count {
            return Err(PoolError::Format {
                line: 1,
                detail: format!("header count {count} but {} genomes", genomes.len()),
            });
        }
        Ok(Self {
            schema_fingerprint: fingerprint,
            feature_dim: dim,
            genomes,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoolError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
