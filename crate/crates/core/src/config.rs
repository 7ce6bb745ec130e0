//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the same
//! camelCase names as the wire format (`populationSize`, `maxIterations`, ...).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::agents::DEFAULT_SAMPLING_RATE;
use crate::evolution::TrainingConfig;
use crate::market::{DEFAULT_ENDOWMENT, DEFAULT_LIQUIDITY, DEFAULT_MAX_ITERATIONS};
use crate::runner::MarketParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn take<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<(), ConfigError> {
    if let Some(v) = map.remove(key) {
        *slot = v.parse().map_err(|_| ConfigError::InvalidValue {
            key: key.to_string(),
            value: v,
        })?;
    }
    Ok(())
}

/// Everything a batch experiment needs: training hyperparameters and the
/// parameters of evaluation markets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    /// Markets run on test papers (artificial and scripted-hybrid).
    pub market: MarketParams,
    /// Endowment of scripted human traders.
    pub human_endowment: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            market: MarketParams {
                b: DEFAULT_LIQUIDITY,
                max_iterations: DEFAULT_MAX_ITERATIONS,
                sampling_rate: DEFAULT_SAMPLING_RATE,
                allow_agent_sell: false,
            },
            human_endowment: DEFAULT_ENDOWMENT,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = parse_key_values(text)?;
        let mut cfg = Self::default();
        let t = &mut cfg.training;
        take(&mut map, "populationSize", &mut t.population_size)?;
        take(&mut map, "epochs", &mut t.epochs)?;
        take(&mut map, "iterationsPerTrainingMarket", &mut t.iterations_per_training_market)?;
        take(&mut map, "samplingRate", &mut t.sampling_rate)?;
        take(&mut map, "mutationSigma", &mut t.mutation_sigma)?;
        take(&mut map, "maskFlipProbability", &mut t.mask_flip_probability)?;
        take(&mut map, "profitThreshold", &mut t.profit_threshold)?;
        take(&mut map, "rngSeed", &mut t.rng_seed)?;
        take(&mut map, "b", &mut t.b)?;
        take(&mut map, "endowment", &mut t.endowment)?;
        take(&mut map, "initialExemplars", &mut t.initial_exemplars)?;
        // evaluation markets default to the training market's liquidity and rate
        cfg.market.b = t.b;
        cfg.market.sampling_rate = t.sampling_rate;
        let m = &mut cfg.market;
        take(&mut map, "marketB", &mut m.b)?;
        take(&mut map, "maxIterations", &mut m.max_iterations)?;
        take(&mut map, "marketSamplingRate", &mut m.sampling_rate)?;
        take(&mut map, "allowAgentSell", &mut m.allow_agent_sell)?;
        take(&mut map, "humanEndowment", &mut cfg.human_endowment)?;
        if let Some(k) = map.into_keys().next() {
            return Err(ConfigError::UnknownKey(k));
        }
        cfg.training.validate()?;
        if !(cfg.market.b > 0.0) || cfg.market.max_iterations == 0 {
            return Err(ConfigError::Invalid("marketB and maxIterations must be positive".into()));
        }
        if !(cfg.market.sampling_rate > 0.0 && cfg.market.sampling_rate <= 1.0) {
            return Err(ConfigError::Invalid("marketSamplingRate must lie in (0, 1]".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
