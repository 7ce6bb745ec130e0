//! Deterministic single-market LMSR state machine and trader ledger.
//!
//! A [`MarketState`] holds outstanding share quantities for the two contract
//! sides; a [`Ledger`] holds trader cash and per-market holdings. Orders are
//! always for exactly one share. Every mutation goes through
//! [`MarketState::execute`] or [`MarketState::step`], and a rejected order
//! leaves both the market and the ledger untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmsr;

/// Tolerance used for ledger and cash comparisons.
pub const LEDGER_TOLERANCE: f64 = 1e-9;
/// Tolerance used for price comparisons.
pub const PRICE_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_LIQUIDITY: f64 = 10.0;
pub const DEFAULT_ENDOWMENT: f64 = 25.0;
pub const DEFAULT_MAX_ITERATIONS: u32 = 7200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AssetSide {
    WillReplicate,
    WillNotReplicate,
}

impl AssetSide {
    pub fn opposite(self) -> Self {
        match self {
            AssetSide::WillReplicate => AssetSide::WillNotReplicate,
            AssetSide::WillNotReplicate => AssetSide::WillReplicate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraderKind {
    Agent,
    Human,
}

/// Result of the replication study behind a market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Replicated,
    NotReplicated,
}

impl Outcome {
    /// Value of one will-replicate contract after settlement.
    pub fn value(self) -> f64 {
        match self {
            Outcome::Replicated => 1.0,
            Outcome::NotReplicated => 0.0,
        }
    }

    pub fn winning_side(self) -> AssetSide {
        match self {
            Outcome::Replicated => AssetSide::WillReplicate,
            Outcome::NotReplicated => AssetSide::WillNotReplicate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketStatus {
    Open,
    Closed,
    Settled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    InsufficientCash,
    InsufficientHoldings,
    MarketClosed,
    UnknownTrader,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::InsufficientCash => "InsufficientCash",
            RejectReason::InsufficientHoldings => "InsufficientHoldings",
            RejectReason::MarketClosed => "MarketClosed",
            RejectReason::UnknownTrader => "UnknownTrader",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("liquidity parameter must be positive and finite, got {0}")]
    InvalidLiquidity(f64),
    #[error("maxIterations must be positive")]
    InvalidMaxIterations,
    #[error("cannot quote on a market that is not open")]
    QuoteOnClosedMarket,
    #[error("no outstanding shares of {0:?} to sell")]
    NoSharesOutstanding(AssetSide),
    #[error("market is closed")]
    MarketClosed,
    #[error("market is already closed")]
    AlreadyClosed,
    #[error("market must be closed before settlement")]
    SettleBeforeClose,
}

/// A single-share order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Order {
    pub trader_id: String,
    pub trader_kind: TraderKind,
    pub side: AssetSide,
    pub direction: Direction,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TradeRecord {
    pub order: Order,
    pub executed_at_iteration: u32,
    pub price_yes_after: f64,
    pub cash_delta: f64,
    pub accepted: bool,
    pub reject_reason: Option<RejectReason>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdings {
    pub yes: u64,
    pub no: u64,
}

impl Holdings {
    pub fn get(&self, side: AssetSide) -> u64 {
        match side {
            AssetSide::WillReplicate => self.yes,
            AssetSide::WillNotReplicate => self.no,
        }
    }

    fn get_mut(&mut self, side: AssetSide) -> &mut u64 {
        match side {
            AssetSide::WillReplicate => &mut self.yes,
            AssetSide::WillNotReplicate => &mut self.no,
        }
    }

    /// Settled value of these holdings.
    pub fn value(&self, outcome: Outcome) -> f64 {
        self.get(outcome.winning_side()) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub cash: f64,
    /// Holdings keyed by market id.
    pub holdings: BTreeMap<String, Holdings>,
}

impl Account {
    pub fn holdings_in(&self, market_id: &str) -> Holdings {
        self.holdings.get(market_id).copied().unwrap_or_default()
    }
}

/// Cash and holdings for every trader sharing one cash pool.
///
/// Holdings are tracked per market, so one ledger can back several markets
/// whose traders share cash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    accounts: BTreeMap<String, Account>,
    collected: BTreeMap<String, f64>,
    endowed: f64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or tops up) an account with `cash`.
    pub fn open_account(&mut self, trader_id: impl Into<String>, cash: f64) {
        assert!(cash >= 0.0 && cash.is_finite(), "endowment must be nonnegative");
        self.accounts.entry(trader_id.into()).or_default().cash += cash;
        self.endowed += cash;
    }

    pub fn account(&self, trader_id: &str) -> Option<&Account> {
        self.accounts.get(trader_id)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&String, &Account)> {
        self.accounts.iter()
    }

    pub fn cash(&self, trader_id: &str) -> Option<f64> {
        self.accounts.get(trader_id).map(|a| a.cash)
    }

    pub fn holdings(&self, trader_id: &str, market_id: &str) -> Holdings {
        self.accounts
            .get(trader_id)
            .map(|a| a.holdings_in(market_id))
            .unwrap_or_default()
    }

    /// Net trade proceeds collected by the market maker of `market_id`.
    pub fn market_maker_collected(&self, market_id: &str) -> f64 {
        self.collected.get(market_id).copied().unwrap_or(0.0)
    }

    pub fn total_collected(&self) -> f64 {
        self.collected.values().sum()
    }

    pub fn total_endowed(&self) -> f64 {
        self.endowed
    }

    pub fn total_cash(&self) -> f64 {
        self.accounts.values().map(|a| a.cash).sum()
    }

    /// `total cash + collected - endowments`; zero up to rounding before settlement.
    pub fn conservation_gap(&self) -> f64 {
        self.total_cash() + self.total_collected() - self.endowed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarketState {
    pub market_id: String,
    q_yes: f64,
    q_no: f64,
    b: f64,
    iteration: u32,
    max_iterations: u32,
    status: MarketStatus,
    final_price_yes: Option<f64>,
}

impl MarketState {
    pub fn new(market_id: impl Into<String>, b: f64, max_iterations: u32) -> Result<Self, MarketError> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(MarketError::InvalidLiquidity(b));
        }
        if max_iterations == 0 {
            return Err(MarketError::InvalidMaxIterations);
        }
        Ok(Self {
            market_id: market_id.into(),
            q_yes: 0.0,
            q_no: 0.0,
            b,
            iteration: 0,
            max_iterations,
            status: MarketStatus::Open,
            final_price_yes: None,
        })
    }

    pub fn q_yes(&self) -> f64 {
        self.q_yes
    }

    pub fn q_no(&self) -> f64 {
        self.q_no
    }

    pub fn quantity(&self, side: AssetSide) -> f64 {
        match side {
            AssetSide::WillReplicate => self.q_yes,
            AssetSide::WillNotReplicate => self.q_no,
        }
    }

    pub fn liquidity(&self) -> f64 {
        self.b
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations
    }

    pub fn status(&self) -> MarketStatus {
        self.status
    }

    pub fn is_open(&self) -> bool {
        self.status == MarketStatus::Open
    }

    pub fn final_price_yes(&self) -> Option<f64> {
        self.final_price_yes
    }

    pub fn price(&self, side: AssetSide) -> f64 {
        match side {
            AssetSide::WillReplicate => lmsr::price_yes(self.q_yes, self.q_no, self.b),
            AssetSide::WillNotReplicate => lmsr::price_no(self.q_yes, self.q_no, self.b),
        }
    }

    pub fn price_yes(&self) -> f64 {
        self.price(AssetSide::WillReplicate)
    }

    pub fn cost(&self) -> f64 {
        lmsr::cost(self.q_yes, self.q_no, self.b)
    }

    /// Signed cash delta to the trader for a one-share trade.
    pub fn quote(&self, side: AssetSide, direction: Direction) -> Result<f64, MarketError> {
        if !self.is_open() {
            return Err(MarketError::QuoteOnClosedMarket);
        }
        let p = self.price(side);
        match direction {
            Direction::Buy => Ok(-lmsr::cost_delta(p, 1.0, self.b)),
            Direction::Sell => {
                if self.quantity(side) < 1.0 {
                    return Err(MarketError::NoSharesOutstanding(side));
                }
                Ok(-lmsr::cost_delta(p, -1.0, self.b))
            }
        }
    }

    fn reject(&self, order: Order, reason: RejectReason) -> TradeRecord {
        TradeRecord {
            order,
            executed_at_iteration: self.iteration,
            price_yes_after: self.price_yes(),
            cash_delta: 0.0,
            accepted: false,
            reject_reason: Some(reason),
        }
    }

    /// Executes one order against `ledger`. Never fails; rejections are
    /// reported in the returned record and leave all state unchanged.
    pub fn execute(&mut self, ledger: &mut Ledger, order: Order) -> TradeRecord {
        if !self.is_open() {
            return self.reject(order, RejectReason::MarketClosed);
        }
        let Some(account) = ledger.accounts.get(&order.trader_id) else {
            return self.reject(order, RejectReason::UnknownTrader);
        };
        let held = account.holdings_in(&self.market_id).get(order.side);
        let cash_delta = match order.direction {
            Direction::Buy => {
                let delta = self.quote(order.side, Direction::Buy).expect("market is open");
                if -delta > account.cash {
                    return self.reject(order, RejectReason::InsufficientCash);
                }
                delta
            }
            Direction::Sell => {
                if held == 0 {
                    return self.reject(order, RejectReason::InsufficientHoldings);
                }
                self.quote(order.side, Direction::Sell).expect("holder implies outstanding share")
            }
        };

        let step = match order.direction {
            Direction::Buy => 1.0,
            Direction::Sell => -1.0,
        };
        match order.side {
            AssetSide::WillReplicate => self.q_yes += step,
            AssetSide::WillNotReplicate => self.q_no += step,
        }
        let account = ledger.accounts.get_mut(&order.trader_id).expect("checked above");
        // cash - cost with cost <= cash cannot go negative in IEEE arithmetic
        account.cash += cash_delta;
        let holdings = match account.holdings.get_mut(&self.market_id) {
            Some(h) => h,
            None => account.holdings.entry(self.market_id.clone()).or_default(),
        };
        let slot = holdings.get_mut(order.side);
        match order.direction {
            Direction::Buy => *slot += 1,
            Direction::Sell => *slot -= 1,
        }
        match ledger.collected.get_mut(&self.market_id) {
            Some(c) => *c -= cash_delta,
            None => {
                ledger.collected.insert(self.market_id.clone(), -cash_delta);
            }
        }

        TradeRecord {
            order,
            executed_at_iteration: self.iteration,
            price_yes_after: self.price_yes(),
            cash_delta,
            accepted: true,
            reject_reason: None,
        }
    }

    /// Runs one market iteration: all agent orders in their given order, then
    /// human orders by ascending sequence number.
    pub fn step(
        &mut self,
        ledger: &mut Ledger,
        agent_orders: Vec<Order>,
        mut human_queue: Vec<Order>,
    ) -> Result<Vec<TradeRecord>, MarketError> {
        self.begin_iteration()?;
        human_queue.sort_by_key(|o| o.sequence);
        let mut records = Vec::with_capacity(agent_orders.len() + human_queue.len());
        for order in agent_orders.into_iter().chain(human_queue) {
            records.push(self.execute(ledger, order));
        }
        Ok(records)
    }

    /// Advances the iteration counter. Callers that interleave agent
    /// decisions with execution use this followed by [`execute`](Self::execute)
    /// for each agent and [`execute_queue`](Self::execute_queue) for humans.
    pub fn begin_iteration(&mut self) -> Result<(), MarketError> {
        if !self.is_open() || self.iteration >= self.max_iterations {
            return Err(MarketError::MarketClosed);
        }
        self.iteration += 1;
        Ok(())
    }

    /// Executes queued orders in ascending sequence order.
    pub fn execute_queue(&mut self, ledger: &mut Ledger, mut queue: Vec<Order>) -> Vec<TradeRecord> {
        queue.sort_by_key(|o| o.sequence);
        queue.into_iter().map(|o| self.execute(ledger, o)).collect()
    }

    pub fn is_exhausted(&self) -> bool {
        self.iteration >= self.max_iterations
    }

    /// Closes the market and freezes the final will-replicate price.
    pub fn close(&mut self) -> Result<f64, MarketError> {
        if !self.is_open() {
            return Err(MarketError::AlreadyClosed);
        }
        let p = self.price_yes();
        self.status = MarketStatus::Closed;
        self.final_price_yes = Some(p);
        Ok(p)
    }

    /// Settlement payouts for every account: remaining cash plus one unit per
    /// winning-side share held in this market.
    pub fn settle(&mut self, ledger: &Ledger, outcome: Outcome) -> Result<BTreeMap<String, f64>, MarketError> {
        if self.status != MarketStatus::Closed {
            return Err(MarketError::SettleBeforeClose);
        }
        self.status = MarketStatus::Settled;
        Ok(ledger
            .accounts
            .iter()
            .map(|(id, a)| (id.clone(), a.cash + a.holdings_in(&self.market_id).value(outcome)))
            .collect())
    }

    /// Units owed by the market maker to holders of the winning side.
    pub fn liability(&self, outcome: Outcome) -> f64 {
        self.quantity(outcome.winning_side())
    }
}

/// Writes records as JSON lines, one record per line.
pub fn write_trade_log<W: Write>(mut w: W, records: &[TradeRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trade_log<R: BufRead>(r: R) -> std::io::Result<Vec<TradeRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
