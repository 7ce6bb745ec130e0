//! Scripted stand-ins for human participants.
//!
//! Each trader arrives in an iteration with probability
//! `aggressiveness / 100` and, on arrival, may submit one order through the
//! human queue. Orders are decided on the price visible before the
//! iteration's agents act, as a real participant's would be.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::market::{AssetSide, Direction, MarketState, Order, TraderKind};
use crate::rng::SimRng;
use crate::runner::Sequencer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HumanStrategy {
    /// Buys whichever side is cheaper than the trader's own belief by more
    /// than `margin`.
    ValueTrader,
    /// Buys the side whose price rose in the most recent price move.
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScriptedHumanTrader {
    pub trader_id: String,
    /// Belief that the study replicates, in (0, 1).
    pub prior_probability: f64,
    /// Expected orders per 100 iterations, in [0, 100].
    pub aggressiveness: f64,
    pub strategy: HumanStrategy,
    /// Minimum edge before a ValueTrader buys, in [0, 0.5].
    #[serde(default)]
    pub margin: f64,
}

impl ScriptedHumanTrader {
    pub fn value_trader(id: impl Into<String>, prior: f64, aggressiveness: f64, margin: f64) -> Self {
        Self {
            trader_id: id.into(),
            prior_probability: prior,
            aggressiveness,
            strategy: HumanStrategy::ValueTrader,
            margin,
        }
    }

    pub fn momentum(id: impl Into<String>, aggressiveness: f64) -> Self {
        Self {
            trader_id: id.into(),
            prior_probability: 0.5,
            aggressiveness,
            strategy: HumanStrategy::Momentum,
            margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = self.prior_probability > 0.0
            && self.prior_probability < 1.0
            && (0.0..=100.0).contains(&self.aggressiveness)
            && (0.0..=0.5).contains(&self.margin)
            && !self.trader_id.is_empty();
        if ok {
            Ok(())
        } else {
            Err(EvalError::InvalidTrader(self.trader_id.clone()))
        }
    }

    /// Side to buy given the current price and the sign of the last move.
    pub fn decide(&self, price_yes: f64, last_move: f64) -> Option<AssetSide> {
        match self.strategy {
            HumanStrategy::ValueTrader => {
                if self.prior_probability - price_yes > self.margin {
                    Some(AssetSide::WillReplicate)
                } else if price_yes - self.prior_probability > self.margin {
                    Some(AssetSide::WillNotReplicate)
                } else {
                    None
                }
            }
            HumanStrategy::Momentum => {
                if last_move > 0.0 {
                    Some(AssetSide::WillReplicate)
                } else if last_move < 0.0 {
                    Some(AssetSide::WillNotReplicate)
                } else {
                    None
                }
            }
        }
    }
}

/// A trader read from a roster file, optionally restricted to one paper.
#[derive(Debug, Clone, PartialEq)]
pub struct RosterEntry {
    /// `None` means the trader joins every market.
    pub claim_id: Option<String>,
    pub trader: ScriptedHumanTrader,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RosterRow {
    trader_id: String,
    strategy: HumanStrategy,
    prior_probability: f64,
    aggressiveness: f64,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    margin: Option<f64>,
    #[serde(default)]
    claim_id: Option<String>,
}

/// Reads a roster CSV with columns `traderId,strategy,priorProbability,
/// aggressiveness` and optional `margin` and `claimId`.
pub fn read_roster<R: Read>(r: R) -> Result<Vec<RosterEntry>, EvalError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: RosterRow = row?;
        let trader = ScriptedHumanTrader {
            trader_id: row.trader_id,
            prior_probability: row.prior_probability,
            aggressiveness: row.aggressiveness,
            strategy: row.strategy,
            margin: row.margin.unwrap_or(0.0),
        };
        trader.validate()?;
        out.push(RosterEntry {
            claim_id: row.claim_id.filter(|c| !c.is_empty()),
            trader,
        });
    }
    Ok(out)
}

/// Traders of `roster` that join the market on `claim_id`.
pub fn roster_for(roster: &[RosterEntry], claim_id: &str) -> Vec<ScriptedHumanTrader> {
    roster
        .iter()
        .filter(|e| e.claim_id.as_deref().is_none_or(|c| c == claim_id))
        .map(|e| e.trader.clone())
        .collect()
}

/// Generates the scripted traders' orders iteration by iteration.
pub(crate) struct Crowd<'a> {
    traders: &'a [ScriptedHumanTrader],
    rng: SimRng,
    last_price: Option<f64>,
    last_move: f64,
}

impl<'a> Crowd<'a> {
    pub(crate) fn new(traders: &'a [ScriptedHumanTrader], rng: SimRng) -> Self {
        Self {
            traders,
            rng,
            last_price: None,
            last_move: 0.0,
        }
    }

    pub(crate) fn orders(&mut self, state: &MarketState, seq: &Sequencer) -> Vec<Order> {
        let price = state.price_yes();
        if let Some(prev) = self.last_price {
            if price != prev {
                self.last_move = price - prev;
            }
        }
        self.last_price = Some(price);
        let mut queue = Vec::new();
        for t in self.traders {
            if !self.rng.random_bool(t.aggressiveness / 100.0) {
                continue;
            }
            if let Some(side) = t.decide(price, self.last_move) {
                queue.push(Order {
                    trader_id: t.trader_id.clone(),
                    trader_kind: TraderKind::Human,
                    side,
                    direction: Direction::Buy,
                    sequence: seq.next(),
                });
            }
        }
        queue
    }
}
