//! Genetic training of agent pools.
//!
//! Each training paper is traded in a bot-only market that settles against
//! its known outcome. Agents that end with more than their endowment (plus
//! `profit_threshold`) survive unchanged and reproduce with mutation, chosen
//! in proportion to profit; everyone else is removed. If nobody profits the
//! population restarts from fresh random genomes.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentGenome, AgentId, DEFAULT_SAMPLING_RATE, MAX_EXEMPLARS};
use crate::config::ConfigError;
use crate::dataset::{FeatureSchema, PaperRecord};
use crate::market::{Ledger, MarketError, Outcome, DEFAULT_ENDOWMENT, DEFAULT_LIQUIDITY};
use crate::rng::{child_rng, SimRng, STREAM_EVOLVE, STREAM_INIT, STREAM_MARKET, STREAM_SHUFFLE};
use crate::runner::{MarketParams, MarketRunner, RunnerError, Sequencer};

/// Most features an initial genome attends to.
pub const MAX_INITIAL_MASK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("paper {0} has no outcome")]
    MissingOutcome(String),
    #[error("paper {claim} has {actual} features, schema has {expected}")]
    DimensionMismatch { claim: String, expected: usize, actual: usize },
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingConfig {
    pub population_size: usize,
    pub epochs: usize,
    pub iterations_per_training_market: u32,
    pub sampling_rate: f64,
    pub mutation_sigma: f64,
    pub mask_flip_probability: f64,
    pub profit_threshold: f64,
    pub rng_seed: u64,
    pub b: f64,
    pub endowment: f64,
    pub initial_exemplars: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            epochs: 30,
            iterations_per_training_market: 500,
            sampling_rate: DEFAULT_SAMPLING_RATE,
            mutation_sigma: 0.1,
            mask_flip_probability: 0.05,
            profit_threshold: 0.0,
            rng_seed: 0,
            b: DEFAULT_LIQUIDITY,
            endowment: DEFAULT_ENDOWMENT,
            initial_exemplars: 4,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.population_size < 2 {
            return bad("populationSize must be at least 2");
        }
        if !(self.mutation_sigma > 0.0) {
            return bad("mutationSigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_flip_probability) {
            return bad("maskFlipProbability must lie in [0, 1]");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return bad("samplingRate must lie in (0, 1]");
        }
        if !(self.b > 0.0) || !(self.endowment > 0.0) || self.iterations_per_training_market == 0 {
            return bad("b, endowment and iterationsPerTrainingMarket must be positive");
        }
        if self.initial_exemplars == 0 || self.initial_exemplars > MAX_EXEMPLARS {
            return bad("initialExemplars must lie in 1..=16");
        }
        Ok(())
    }

    fn market_params(&self) -> MarketParams {
        MarketParams {
            b: self.b,
            max_iterations: self.iterations_per_training_market,
            sampling_rate: self.sampling_rate,
            allow_agent_sell: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentWealth {
    pub final_wealth: f64,
    pub participated: bool,
}

/// Settled wealth of every pool member after one training market.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthReport {
    pub claim_id: String,
    pub features: Vec<f64>,
    pub outcome: Outcome,
    pub final_price_yes: f64,
    pub agents: BTreeMap<AgentId, AgentWealth>,
}

impl WealthReport {
    pub fn absolute_error(&self) -> f64 {
        (self.final_price_yes - self.outcome.value()).abs()
    }

    pub fn mean_wealth(&self) -> f64 {
        if self.agents.is_empty() {
            return 0.0;
        }
        self.agents.values().map(|a| a.final_wealth).sum::<f64>() / self.agents.len() as f64
    }
}

fn random_genome<R: Rng + ?Sized>(
    agent_id: AgentId,
    config: &TrainingConfig,
    dim: usize,
    exemplar_source: &[&[f64]],
    rng: &mut R,
) -> AgentGenome {
    let weights: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let k = rng.random_range(1..=MAX_INITIAL_MASK.min(dim));
    let mut mask = vec![false; dim];
    for i in rand::seq::index::sample(rng, dim, k) {
        mask[i] = true;
    }
    let exemplars = (0..config.initial_exemplars)
        .map(|_| exemplar_source[rng.random_range(0..exemplar_source.len())].to_vec())
        .collect();
    AgentGenome {
        agent_id,
        weights,
        mask,
        bias: 0.0,
        exemplars,
        similarity_threshold: rng.random_range(0.6..0.95),
        margin: rng.random_range(0.02..0.15),
        endowment: config.endowment,
    }
}

/// `population_size` random genomes with ids `first_id..`.
fn fresh_population<R: Rng + ?Sized>(
    config: &TrainingConfig,
    dim: usize,
    training_set: &[PaperRecord],
    first_id: AgentId,
    rng: &mut R,
) -> Result<Vec<AgentGenome>, TrainingError> {
    if training_set.is_empty() {
        return Err(TrainingError::EmptyTrainingSet);
    }
    let source: Vec<&[f64]> = training_set.iter().map(|r| r.features.as_slice()).collect();
    Ok((0..config.population_size as u64)
        .map(|i| random_genome(first_id + i, config, dim, &source, rng))
        .collect())
}

pub fn init_population<R: Rng + ?Sized>(
    config: &TrainingConfig,
    schema: &FeatureSchema,
    training_set: &[PaperRecord],
    rng: &mut R,
) -> Result<Vec<AgentGenome>, TrainingError> {
    check_dims(training_set, schema.dim())?;
    fresh_population(config, schema.dim(), training_set, 0, rng)
}

fn check_dims(records: &[PaperRecord], dim: usize) -> Result<(), TrainingError> {
    if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
        return Err(TrainingError::DimensionMismatch {
            claim: r.claim_id.clone(),
            expected: dim,
            actual: r.features.len(),
        });
    }
    Ok(())
}

/// Runs a bot-only market on `paper` and settles it against the known outcome.
pub fn run_training_market(
    paper: &PaperRecord,
    pool: &[AgentGenome],
    config: &TrainingConfig,
    rng: SimRng,
) -> Result<WealthReport, TrainingError> {
    let outcome = paper.outcome.ok_or_else(|| TrainingError::MissingOutcome(paper.claim_id.clone()))?;
    let mut ledger = Ledger::new();
    let mut runner = MarketRunner::open(&paper.claim_id, &paper.features, pool, config.market_params(), &mut ledger, rng)?.without_log();
    let final_price_yes = runner.run_to_close(&mut ledger, &Sequencer::new(), |_, _| Vec::new())?;
    let payouts = runner.settle(&ledger, outcome)?;
    let endowments: BTreeMap<AgentId, f64> = pool.iter().map(|g| (g.agent_id, g.endowment)).collect();
    let agents = runner
        .agents()
        .map(|(id, account, _, traded)| {
            let final_wealth = payouts.get(account).copied().unwrap_or(endowments[&id]);
            (id, AgentWealth { final_wealth, participated: traded })
        })
        .collect();
    Ok(WealthReport {
        claim_id: paper.claim_id.clone(),
        features: paper.features.clone(),
        outcome,
        final_price_yes,
        agents,
    })
}

fn cosine_on_mask(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for ((x, y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        -1.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Adds `features` to the exemplar set, keeping the `MAX_EXEMPLARS` nearest
/// to the new point.
fn absorb_exemplar(genome: &mut AgentGenome, features: &[f64]) {
    if genome.exemplars.iter().any(|e| e == features) {
        return;
    }
    genome.exemplars.push(features.to_vec());
    while genome.exemplars.len() > MAX_EXEMPLARS {
        // farthest from the new point; the newest wins ties
        let far = genome
            .exemplars
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| {
                cosine_on_mask(a, features, &genome.mask)
                    .total_cmp(&cosine_on_mask(b, features, &genome.mask))
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .expect("nonempty");
        genome.exemplars.remove(far);
    }
}

/// Offspring of `parent`: Gaussian perturbation of weights and bias, random
/// mask flips, small clamped perturbations of threshold and margin. Exemplars
/// are inherited.
pub fn mutate<R: Rng + ?Sized>(parent: &AgentGenome, new_id: AgentId, config: &TrainingConfig, rng: &mut R) -> AgentGenome {
    let sigma = config.mutation_sigma;
    let mut noise = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    let weights: Vec<f64> = parent.weights.iter().map(|w| w + noise(sigma)).collect();
    let bias = parent.bias + noise(sigma);
    let similarity_threshold = (parent.similarity_threshold + noise(sigma / 10.0)).clamp(0.0, 1.0);
    let margin = (parent.margin + noise(sigma / 10.0)).clamp(0.0, 0.5);
    let mut mask = parent.mask.clone();
    for bit in mask.iter_mut() {
        if rng.random_bool(config.mask_flip_probability) {
            *bit = !*bit;
        }
    }
    if !mask.iter().any(|&m| m) {
        let i = rng.random_range(0..mask.len());
        mask[i] = true;
    }
    AgentGenome {
        agent_id: new_id,
        weights,
        mask,
        bias,
        exemplars: parent.exemplars.clone(),
        similarity_threshold,
        margin,
        endowment: parent.endowment,
    }
}

/// Next generation after one settled training market.
///
/// Survivors keep their genome and id. Remaining slots are filled with
/// mutated offspring whose parents are drawn in proportion to profit;
/// offspring also remember the paper just traded as an exemplar.
pub fn evolve<R: Rng + ?Sized>(
    pool: &[AgentGenome],
    report: &WealthReport,
    config: &TrainingConfig,
    training_set: &[PaperRecord],
    rng: &mut R,
) -> Result<Vec<AgentGenome>, TrainingError> {
    let mut next_id = pool.iter().map(|g| g.agent_id + 1).max().unwrap_or(0);
    let mut survivors: Vec<(&AgentGenome, f64)> = pool
        .iter()
        .filter_map(|g| {
            let wealth = report.agents.get(&g.agent_id)?.final_wealth;
            let profit = wealth - g.endowment - config.profit_threshold;
            (profit > 0.0).then_some((g, profit))
        })
        .collect();

    if survivors.is_empty() {
        let dim = pool.first().map(|g| g.dim()).unwrap_or(report.features.len());
        return fresh_population(config, dim, training_set, next_id, rng);
    }
    if survivors.len() > config.population_size {
        survivors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.agent_id.cmp(&b.0.agent_id)));
        survivors.truncate(config.population_size);
        survivors.sort_by_key(|(g, _)| g.agent_id);
    }

    let weights = WeightedIndex::new(survivors.iter().map(|(_, p)| *p)).expect("profits are positive and finite");
    let mut out: Vec<AgentGenome> = survivors.iter().map(|(g, _)| (*g).clone()).collect();
    while out.len() < config.population_size {
        let parent = survivors[weights.sample(rng)].0;
        let mut child = mutate(parent, next_id, config, rng);
        absorb_exemplar(&mut child, &report.features);
        next_id += 1;
        out.push(child);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_training_ae: f64,
    /// Mean survivor count per evolve step.
    pub survivors: f64,
    pub mean_wealth: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub pool: Vec<AgentGenome>,
    pub metrics: Vec<EpochMetrics>,
}

/// Full online training loop: every epoch visits the papers in a seeded
/// shuffled order and evolves the pool after each settled market.
pub fn train_market(
    training_set: &[PaperRecord],
    schema: &FeatureSchema,
    config: &TrainingConfig,
) -> Result<TrainingRun, TrainingError> {
    train_market_with_progress(training_set, schema, config, |_| {})
}

pub fn train_market_with_progress<F: FnMut(&EpochMetrics)>(
    training_set: &[PaperRecord],
    schema: &FeatureSchema,
    config: &TrainingConfig,
    mut progress: F,
) -> Result<TrainingRun, TrainingError> {
    if let Some(r) = training_set.iter().find(|r| r.outcome.is_none()) {
        return Err(TrainingError::MissingOutcome(r.claim_id.clone()));
    }
    let seed = config.rng_seed;
    let mut pool = init_population(config, schema, training_set, &mut child_rng(seed, &[STREAM_INIT]))?;
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..training_set.len()).collect();
        order.shuffle(&mut child_rng(seed, &[STREAM_SHUFFLE, epoch as u64]));
        let (mut ae, mut survivors, mut wealth) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let paper = &training_set[idx];
            let path = [epoch as u64, idx as u64];
            let report = run_training_market(paper, &pool, config, child_rng(seed, &[STREAM_MARKET, path[0], path[1]]))?;
            ae += report.absolute_error();
            wealth += report.mean_wealth();
            pool = evolve(&pool, &report, config, training_set, &mut child_rng(seed, &[STREAM_EVOLVE, path[0], path[1]]))?;
            survivors += count_survivors(&report, &pool) as f64;
        }
        let n = training_set.len().max(1) as f64;
        let m = EpochMetrics {
            epoch: epoch + 1,
            mean_training_ae: ae / n,
            survivors: survivors / n,
            mean_wealth: wealth / n,
        };
        progress(&m);
        metrics.push(m);
    }
    Ok(TrainingRun { pool, metrics })
}

fn count_survivors(report: &WealthReport, next: &[AgentGenome]) -> usize {
    next.iter().filter(|g| report.agents.contains_key(&g.agent_id)).count()
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, metrics: &[EpochMetrics]) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["epoch", "meanTrainingAE", "survivors", "meanWealth"])?;
    for m in metrics {
        csv.write_record([
            m.epoch.to_string(),
            m.mean_training_ae.to_string(),
            m.survivors.to_string(),
            m.mean_wealth.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
