//! One market driven by a pool of agents plus an external order queue.
//!
//! Training, batch evaluation and the live service all run markets through
//! [`MarketRunner`], so the agents-first rule and the sampling process are
//! identical everywhere.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::agents::{decide, sample_indices_into, AgentError, AgentGenome, AgentId, DEFAULT_SAMPLING_RATE};
use crate::market::{
    Ledger, MarketError, MarketState, Order, Outcome, TradeRecord, TraderKind, DEFAULT_LIQUIDITY,
    DEFAULT_MAX_ITERATIONS,
};
use crate::rng::SimRng;

/// Hands out order sequence numbers in arrival order.
#[derive(Debug, Default)]
pub struct Sequencer(AtomicU64);

impl Sequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(n: u64) -> Self {
        Self(AtomicU64::new(n))
    }

    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }

    pub fn peek(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarketParams {
    pub b: f64,
    pub max_iterations: u32,
    pub sampling_rate: f64,
    pub allow_agent_sell: bool,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            b: DEFAULT_LIQUIDITY,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            sampling_rate: DEFAULT_SAMPLING_RATE,
            allow_agent_sell: false,
        }
    }
}

/// Ledger account name of an agent trading in one market. Agents get a fresh
/// endowment in every market they join.
pub fn agent_account(agent_id: AgentId, market_id: &str) -> String {
    format!("agent-{agent_id}@{market_id}")
}

#[derive(Debug, Clone)]
struct AgentSlot {
    agent_id: AgentId,
    account: String,
    participates: bool,
    estimate: f64,
    margin: f64,
    traded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub iteration: u32,
    pub price_yes: f64,
}

pub struct MarketRunner {
    state: MarketState,
    slots: Vec<AgentSlot>,
    rng: SimRng,
    params: MarketParams,
    log: Vec<TradeRecord>,
    keep_log: bool,
    history: Vec<PricePoint>,
    agent_trades: usize,
    human_trades: usize,
    sampled: Vec<usize>,
}

impl MarketRunner {
    /// Opens a market over `features` with the given agent pool.
    ///
    /// Every agent's gate and estimate depend only on the features, so both
    /// are evaluated once here. Agents passing the gate receive a ledger
    /// account funded with their endowment.
    pub fn open(
        market_id: &str,
        features: &[f64],
        pool: &[AgentGenome],
        params: MarketParams,
        ledger: &mut Ledger,
        rng: SimRng,
    ) -> Result<Self, RunnerError> {
        let state = MarketState::new(market_id, params.b, params.max_iterations)?;
        let mut ordered: Vec<&AgentGenome> = pool.iter().collect();
        ordered.sort_by_key(|g| g.agent_id);
        let mut slots = Vec::with_capacity(ordered.len());
        for g in ordered {
            let participates = g.should_participate(features)?;
            let estimate = g.estimate_probability(features)?;
            let account = agent_account(g.agent_id, market_id);
            if participates {
                ledger.open_account(account.clone(), g.endowment);
            }
            slots.push(AgentSlot {
                agent_id: g.agent_id,
                account,
                participates,
                estimate,
                margin: g.margin,
                traded: false,
            });
        }
        let history = vec![PricePoint {
            iteration: 0,
            price_yes: state.price_yes(),
        }];
        Ok(Self {
            state,
            slots,
            rng,
            params,
            log: Vec::new(),
            keep_log: true,
            history,
            agent_trades: 0,
            human_trades: 0,
            sampled: Vec::new(),
        })
    }

    /// Stops retaining the trade log (training markets only need prices and
    /// the ledger).
    pub fn without_log(mut self) -> Self {
        self.keep_log = false;
        self
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn market_id(&self) -> &str {
        &self.state.market_id
    }

    pub fn params(&self) -> MarketParams {
        self.params
    }

    /// Runs one iteration: sampled agents decide and trade one at a time on
    /// the live price, then `human_queue` executes in sequence order.
    pub fn step(&mut self, ledger: &mut Ledger, human_queue: Vec<Order>, seq: &Sequencer) -> Result<Vec<TradeRecord>, MarketError> {
        self.state.begin_iteration()?;
        let mut sampled = std::mem::take(&mut self.sampled);
        sample_indices_into(self.slots.len(), self.params.sampling_rate, &mut self.rng, &mut sampled);
        let mut records = Vec::new();
        for &i in &sampled {
            let slot = &self.slots[i];
            if !slot.participates {
                continue;
            }
            let holdings = if self.params.allow_agent_sell {
                ledger.holdings(&slot.account, &self.state.market_id)
            } else {
                Default::default()
            };
            let Some(d) = decide(slot.estimate, self.state.price_yes(), slot.margin, holdings, self.params.allow_agent_sell) else {
                continue;
            };
            let order = Order {
                trader_id: slot.account.clone(),
                trader_kind: TraderKind::Agent,
                side: d.side,
                direction: d.direction,
                sequence: seq.next(),
            };
            let rec = self.state.execute(ledger, order);
            if rec.accepted {
                self.slots[i].traded = true;
                self.agent_trades += 1;
            }
            records.push(rec);
        }
        self.sampled = sampled;
        let human = self.state.execute_queue(ledger, human_queue);
        self.human_trades += human.iter().filter(|r| r.accepted).count();
        records.extend(human);

        if records.iter().any(|r| r.accepted) {
            self.history.push(PricePoint {
                iteration: self.state.iteration(),
                price_yes: self.state.price_yes(),
            });
        }
        if self.keep_log {
            self.log.extend(records.iter().cloned());
        }
        Ok(records)
    }

    /// Steps until the iteration limit, feeding each iteration the orders
    /// returned by `humans`, then closes the market.
    pub fn run_to_close<F>(&mut self, ledger: &mut Ledger, seq: &Sequencer, mut humans: F) -> Result<f64, MarketError>
    where
        F: FnMut(&MarketState, &Ledger) -> Vec<Order>,
    {
        while !self.state.is_exhausted() {
            let queue = humans(&self.state, ledger);
            self.step(ledger, queue, seq)?;
        }
        self.close()
    }

    pub fn close(&mut self) -> Result<f64, MarketError> {
        let p = self.state.close()?;
        self.history.push(PricePoint {
            iteration: self.state.iteration(),
            price_yes: p,
        });
        Ok(p)
    }

    pub fn settle(&mut self, ledger: &Ledger, outcome: Outcome) -> Result<BTreeMap<String, f64>, MarketError> {
        self.state.settle(ledger, outcome)
    }

    pub fn trade_log(&self) -> &[TradeRecord] {
        &self.log
    }

    pub fn price_history(&self) -> &[PricePoint] {
        &self.history
    }

    pub fn agent_trade_count(&self) -> usize {
        self.agent_trades
    }

    pub fn human_trade_count(&self) -> usize {
        self.human_trades
    }

    /// Agents whose gate passed for this market's features.
    pub fn participant_count(&self) -> usize {
        self.slots.iter().filter(|s| s.participates).count()
    }

    /// `(agent id, ledger account, gate passed, traded at least once)` per agent.
    pub fn agents(&self) -> impl Iterator<Item = (AgentId, &str, bool, bool)> {
        self.slots.iter().map(|s| (s.agent_id, s.account.as_str(), s.participates, s.traded))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RunnerError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}
