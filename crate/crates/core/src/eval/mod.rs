//! Scoring closed markets and comparing two experimental settings.

pub mod scripted;
pub mod wilcoxon;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentPool, PoolError};
use crate::dataset::{FeatureSchema, PaperRecord};
use crate::market::{Ledger, Outcome, TradeRecord};
use crate::rng::{child_rng, derive_seed, STREAM_HUMANS, STREAM_MARKET};
use crate::runner::{MarketParams, MarketRunner, PricePoint, RunnerError, Sequencer};

pub use scripted::{read_roster, roster_for, HumanStrategy, RosterEntry, ScriptedHumanTrader};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("results are not paired: {0}")]
    UnpairedResults(String),
    #[error("need at least {min} nonzero differences, got {0}", min = wilcoxon::MIN_PAIRS)]
    TooFewPairs(usize),
    #[error(transparent)]
    PoolSchemaMismatch(#[from] PoolError),
    #[error("pool expects {pool} features but paper {claim_id} has {paper}")]
    DimensionMismatch { claim_id: String, pool: usize, paper: usize },
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("invalid scripted trader {0}")]
    InvalidTrader(String),
    #[error("result row {market_id}: {detail}")]
    InconsistentResult { market_id: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::market::MarketError> for EvalError {
    fn from(e: crate::market::MarketError) -> Self {
        EvalError::Runner(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    Correct,
    NotCorrect,
    NoPrediction,
}

impl Prediction {
    /// Short label used in table output.
    pub fn label(self) -> &'static str {
        match self {
            Prediction::Correct => "C",
            Prediction::NotCorrect => "NC",
            Prediction::NoPrediction => "--",
        }
    }
}

/// A closing price of exactly 0.5 is only a non-prediction when nobody traded;
/// if trading returned the price to 0.5 it counts as wrong.
pub fn classify(final_price_yes: f64, outcome: Outcome, trade_count: u64) -> Prediction {
    if final_price_yes == 0.5 {
        return if trade_count == 0 {
            Prediction::NoPrediction
        } else {
            Prediction::NotCorrect
        };
    }
    match (final_price_yes > 0.5, outcome) {
        (true, Outcome::Replicated) | (false, Outcome::NotReplicated) => Prediction::Correct,
        _ => Prediction::NotCorrect,
    }
}

pub fn absolute_error(final_price_yes: f64, outcome: Outcome) -> f64 {
    (final_price_yes - outcome.value()).abs()
}

/// One row of a result CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarketResult {
    pub market_id: String,
    pub final_price_yes: f64,
    pub outcome: Outcome,
    pub prediction: Prediction,
    pub absolute_error: f64,
    pub agent_trades: u64,
    pub human_trades: u64,
}

impl MarketResult {
    pub fn score(market_id: impl Into<String>, final_price_yes: f64, outcome: Outcome, agent_trades: u64, human_trades: u64) -> Self {
        Self {
            market_id: market_id.into(),
            final_price_yes,
            outcome,
            prediction: classify(final_price_yes, outcome, agent_trades + human_trades),
            absolute_error: absolute_error(final_price_yes, outcome),
            agent_trades,
            human_trades,
        }
    }

    /// Checks that the derived columns agree with price, outcome and counts.
    pub fn check(&self) -> Result<(), EvalError> {
        let bad = |detail: String| EvalError::InconsistentResult {
            market_id: self.market_id.clone(),
            detail,
        };
        if !(0.0..=1.0).contains(&self.final_price_yes) {
            return Err(bad(format!("price {} outside [0, 1]", self.final_price_yes)));
        }
        let expected = Self::score(&self.market_id, self.final_price_yes, self.outcome, self.agent_trades, self.human_trades);
        if expected.prediction != self.prediction {
            return Err(bad(format!("prediction {:?}, expected {:?}", self.prediction, expected.prediction)));
        }
        if (expected.absolute_error - self.absolute_error).abs() > 1e-9 {
            return Err(bad(format!("absoluteError {}, expected {}", self.absolute_error, expected.absolute_error)));
        }
        Ok(())
    }
}

pub fn write_results<W: Write>(w: W, results: &[MarketResult]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a result CSV and validates every row.
pub fn read_results<R: Read>(r: R) -> Result<Vec<MarketResult>, EvalError> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        let row: MarketResult = rec?;
        row.check()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn save_results(path: impl AsRef<Path>, results: &[MarketResult]) -> Result<(), EvalError> {
    write_results(std::fs::File::create(path)?, results)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<MarketResult>, EvalError> {
    read_results(std::fs::File::open(path)?)
}

/// One market scored in both settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PairedRow {
    pub market_id: String,
    pub outcome: Outcome,
    pub price_a: f64,
    pub prediction_a: Prediction,
    pub ae_a: f64,
    pub price_b: f64,
    pub prediction_b: Prediction,
    pub ae_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub mean_ae_a: f64,
    pub mean_ae_b: f64,
    pub rows: Vec<PairedRow>,
    pub count_correct_a: usize,
    pub count_correct_b: usize,
    /// Rows where A's error is strictly lower than B's.
    pub count_a_lower: usize,
    /// Rows that are NotCorrect under B but Correct under A.
    pub count_flipped_to_correct: usize,
    /// Rows that are Correct under B but NotCorrect under A.
    pub count_flipped_to_incorrect: usize,
}

/// Pairs `a` and `b` by market id. Rows keep the order of `a`.
pub fn summarize(a: &[MarketResult], b: &[MarketResult]) -> Result<Summary, EvalError> {
    let by_id: BTreeMap<&str, &MarketResult> = b.iter().map(|r| (r.market_id.as_str(), r)).collect();
    if by_id.len() != b.len() || a.len() != b.len() {
        return Err(EvalError::UnpairedResults(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    let mut rows = Vec::with_capacity(a.len());
    for ra in a {
        let rb = by_id
            .get(ra.market_id.as_str())
            .ok_or_else(|| EvalError::UnpairedResults(format!("{} missing from second set", ra.market_id)))?;
        if ra.outcome != rb.outcome {
            return Err(EvalError::UnpairedResults(format!("{} has different outcomes", ra.market_id)));
        }
        rows.push(PairedRow {
            market_id: ra.market_id.clone(),
            outcome: ra.outcome,
            price_a: ra.final_price_yes,
            prediction_a: ra.prediction,
            ae_a: ra.absolute_error,
            price_b: rb.final_price_yes,
            prediction_b: rb.prediction,
            ae_b: rb.absolute_error,
        });
    }
    if rows.is_empty() {
        return Err(EvalError::UnpairedResults("no rows".into()));
    }
    let n = rows.len() as f64;
    let correct = |p: Prediction| p == Prediction::Correct;
    Ok(Summary {
        mean_ae_a: rows.iter().map(|r| r.ae_a).sum::<f64>() / n,
        mean_ae_b: rows.iter().map(|r| r.ae_b).sum::<f64>() / n,
        count_correct_a: rows.iter().filter(|r| correct(r.prediction_a)).count(),
        count_correct_b: rows.iter().filter(|r| correct(r.prediction_b)).count(),
        count_a_lower: rows.iter().filter(|r| r.ae_a < r.ae_b).count(),
        count_flipped_to_correct: rows
            .iter()
            .filter(|r| correct(r.prediction_a) && r.prediction_b == Prediction::NotCorrect)
            .count(),
        count_flipped_to_incorrect: rows
            .iter()
            .filter(|r| r.prediction_a == Prediction::NotCorrect && correct(r.prediction_b))
            .count(),
        rows,
    })
}

impl Summary {
    /// Wilcoxon signed-rank test on the paired absolute errors (A minus B).
    pub fn wilcoxon(&self) -> Result<WilcoxonResult, EvalError> {
        let a: Vec<f64> = self.rows.iter().map(|r| r.ae_a).collect();
        let b: Vec<f64> = self.rows.iter().map(|r| r.ae_b).collect();
        wilcoxon_signed_rank(&a, &b)
    }

    /// Writes the per-market table with `label_a` / `label_b` column prefixes.
    pub fn write_table<W: Write>(&self, w: W, label_a: &str, label_b: &str) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "marketId".to_string(),
            "outcome".to_string(),
            format!("{label_a}Price"),
            format!("{label_a}Prediction"),
            format!("{label_a}AE"),
            format!("{label_b}Price"),
            format!("{label_b}Prediction"),
            format!("{label_b}AE"),
        ])?;
        for r in &self.rows {
            let outcome = match r.outcome {
                Outcome::Replicated => "R",
                Outcome::NotReplicated => "NR",
            };
            out.write_record([
                r.market_id.clone(),
                outcome.to_string(),
                r.price_a.to_string(),
                r.prediction_a.label().to_string(),
                r.ae_a.to_string(),
                r.price_b.to_string(),
                r.prediction_b.label().to_string(),
                r.ae_b.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A market run to its iteration limit and closed.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketRun {
    pub market_id: String,
    pub final_price_yes: f64,
    pub outcome: Option<Outcome>,
    pub agent_trades: u64,
    pub human_trades: u64,
    pub trade_log: Vec<TradeRecord>,
    pub price_history: Vec<PricePoint>,
}

impl MarketRun {
    /// `None` when the paper has no recorded outcome.
    pub fn result(&self) -> Option<MarketResult> {
        self.outcome
            .map(|o| MarketResult::score(&self.market_id, self.final_price_yes, o, self.agent_trades, self.human_trades))
    }
}

fn check_dims(paper: &PaperRecord, pool: &AgentPool) -> Result<(), EvalError> {
    if paper.features.len() != pool.feature_dim {
        return Err(EvalError::DimensionMismatch {
            claim_id: paper.claim_id.clone(),
            pool: pool.feature_dim,
            paper: paper.features.len(),
        });
    }
    Ok(())
}

/// Bot-only market on one paper.
pub fn run_artificial_market(paper: &PaperRecord, pool: &AgentPool, params: MarketParams, seed: u64) -> Result<MarketRun, EvalError> {
    run_scripted_hybrid(paper, pool, &[], params, 0.0, seed)
}

/// Market on one paper with scripted traders submitting through the human
/// queue. The agents draw from the same stream as [`run_artificial_market`],
/// so with no scripted traders both runs coincide.
pub fn run_scripted_hybrid(
    paper: &PaperRecord,
    pool: &AgentPool,
    humans: &[ScriptedHumanTrader],
    params: MarketParams,
    human_endowment: f64,
    seed: u64,
) -> Result<MarketRun, EvalError> {
    check_dims(paper, pool)?;
    for h in humans {
        h.validate()?;
    }
    let mut ledger = Ledger::new();
    for h in humans {
        ledger.open_account(h.trader_id.clone(), human_endowment);
    }
    let mut runner = MarketRunner::open(
        &paper.claim_id,
        &paper.features,
        &pool.genomes,
        params,
        &mut ledger,
        child_rng(seed, &[STREAM_MARKET]),
    )?;
    let mut crowd = scripted::Crowd::new(humans, child_rng(seed, &[STREAM_HUMANS]));
    let seq = Sequencer::new();
    let price = runner.run_to_close(&mut ledger, &seq, |state, _| crowd.orders(state, &seq))?;
    Ok(MarketRun {
        market_id: paper.claim_id.clone(),
        final_price_yes: price,
        outcome: paper.outcome,
        agent_trades: runner.agent_trade_count() as u64,
        human_trades: runner.human_trade_count() as u64,
        trade_log: runner.trade_log().to_vec(),
        price_history: runner.price_history().to_vec(),
    })
}

/// Seed of the market for the `index`-th paper of a batch.
pub fn batch_market_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Runs every paper in order. `humans_for` picks the scripted traders of
/// each paper; return an empty list for a bot-only batch.
pub fn run_batch<F>(
    papers: &[PaperRecord],
    pool: &AgentPool,
    schema: &FeatureSchema,
    params: MarketParams,
    human_endowment: f64,
    seed: u64,
    mut humans_for: F,
) -> Result<Vec<MarketRun>, EvalError>
where
    F: FnMut(&PaperRecord) -> Vec<ScriptedHumanTrader>,
{
    pool.check_schema(schema)?;
    papers
        .iter()
        .enumerate()
        .map(|(i, p)| run_scripted_hybrid(p, pool, &humans_for(p), params, human_endowment, batch_market_seed(seed, i)))
        .collect()
}
