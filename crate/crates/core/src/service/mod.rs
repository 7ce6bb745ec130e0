//! Live events: several markets sharing one agent pool and one human cash
//! pool, advanced by an iteration clock.
//!
//! [`Event`] is synchronous and clock-agnostic. The HTTP layer in [`http`]
//! drives it from a timer; tests and replays call [`Event::tick`] directly.
//!
//! Human orders go into a per-market queue guarded by its own mutex. The
//! iteration an order will execute in is stamped under that mutex, and the
//! clock drains the queue under the same mutex before running the iteration,
//! so the stamp is always the iteration that executes the order.

pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentPool, DEFAULT_SAMPLING_RATE};
use crate::market::{
    AssetSide, Direction, Holdings, Ledger, MarketError, MarketStatus, Order, Outcome, TradeRecord, TraderKind,
    DEFAULT_ENDOWMENT, DEFAULT_LIQUIDITY, DEFAULT_MAX_ITERATIONS,
};
use crate::rng::{child_rng, STREAM_MARKET, STREAM_PAYOUT};
use crate::runner::{MarketParams, MarketRunner, PricePoint, RunnerError, Sequencer};

/// Header carrying a participant's session token.
pub const TOKEN_HEADER: &str = "x-session-token";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown event {0}")]
    UnknownEvent(String),
    #[error("unknown market {0}")]
    UnknownMarket(String),
    #[error("invalid session token")]
    InvalidToken,
    #[error("market {0} is closed")]
    MarketClosed(String),
    #[error("event {0} already exists")]
    DuplicateEventId(String),
    #[error("participant {0} already has a session")]
    DuplicateParticipant(String),
    #[error("pool expects {pool} features but market {market_id} has {paper}")]
    PoolSchemaMismatch { market_id: String, pool: usize, paper: usize },
    #[error("event clock already started")]
    AlreadyRunning,
    #[error("markets are still open")]
    MarketsStillOpen,
    #[error("no outcome given for market {0}")]
    MissingOutcome(String),
    #[error("event already settled")]
    AlreadySettled,
    #[error("no agent pool available")]
    NoPool,
    #[error("invalid event config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pool(#[from] crate::agents::PoolError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

impl From<MarketError> for ServiceError {
    fn from(e: MarketError) -> Self {
        ServiceError::Runner(e.into())
    }
}

/// What participants may see of a paper. Outcomes are supplied only at close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PaperInfo {
    pub claim_id: String,
    pub features: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn default_b() -> f64 {
    DEFAULT_LIQUIDITY
}
fn default_max_iterations() -> u32 {
    DEFAULT_MAX_ITERATIONS
}
fn default_period() -> u64 {
    1000
}
fn default_endowment() -> f64 {
    DEFAULT_ENDOWMENT
}
fn default_sampling_rate() -> f64 {
    DEFAULT_SAMPLING_RATE
}
fn default_activity() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarketConfig {
    pub market_id: String,
    pub paper: PaperInfo,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventConfig {
    pub event_id: String,
    pub markets: Vec<MarketConfig>,
    /// Milliseconds between iterations; 0 runs as fast as possible.
    #[serde(default = "default_period")]
    pub iteration_period_ms: u64,
    #[serde(default = "default_endowment")]
    pub participant_endowment: f64,
    /// Pool file to load; the service's default pool is used when absent.
    #[serde(default)]
    pub agent_pool_ref: Option<String>,
    #[serde(default = "default_sampling_rate")]
    pub sampling_rate: f64,
    #[serde(default = "default_activity")]
    pub minimal_activity_requirement: u64,
    #[serde(default)]
    pub allow_agent_sell: bool,
    /// Root seed of the agents' sampling streams.
    #[serde(default)]
    pub seed: u64,
}

impl EventConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::InvalidConfig(m.to_string()));
        if self.event_id.is_empty() {
            return bad("eventId is empty");
        }
        if self.markets.is_empty() {
            return bad("an event needs at least one market");
        }
        if !(self.participant_endowment > 0.0) {
            return bad("participantEndowment must be positive");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return bad("samplingRate must lie in (0, 1]");
        }
        let mut ids: Vec<&str> = self.markets.iter().map(|m| m.market_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.markets.len() {
            return bad("duplicate marketId");
        }
        Ok(())
    }

    fn params(&self, m: &MarketConfig) -> MarketParams {
        MarketParams {
            b: m.b,
            max_iterations: m.max_iterations,
            sampling_rate: self.sampling_rate,
            allow_agent_sell: self.allow_agent_sell,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventStatus {
    /// Created; orders are accepted and execute in the first iteration.
    Pending,
    Running,
    /// Every market reached its iteration limit.
    Closed,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub participant_id: String,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderAck {
    pub sequence: u64,
    pub queued_at_iteration: u32,
}

/// A human order as it reached the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Arrival {
    pub sequence: u64,
    pub participant_id: String,
    pub market_id: String,
    pub side: AssetSide,
    pub direction: Direction,
    pub iteration: u32,
}

/// Everything needed to re-run an event's human activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArrivalLog {
    pub participants: Vec<String>,
    pub arrivals: Vec<Arrival>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Quote {
    pub market_id: String,
    pub price_yes: f64,
    pub price_no: f64,
    pub iteration: u32,
    pub max_iterations: u32,
    pub iterations_remaining: u32,
    pub status: MarketStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Portfolio {
    pub participant_id: String,
    pub cash: f64,
    pub holdings: BTreeMap<String, Holdings>,
    pub accepted_trade_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarketSummary {
    pub market_id: String,
    pub claim_id: String,
    pub meta: BTreeMap<String, String>,
    pub quote: Quote,
    pub participating_agents: usize,
    pub agent_trades: usize,
    pub human_trades: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventSummary {
    pub event_id: String,
    pub status: EventStatus,
    pub iteration_period_ms: u64,
    pub markets: Vec<MarketSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParticipantPayout {
    pub participant_id: String,
    pub cash: f64,
    /// Value of the holdings in the selected market at settlement.
    pub holdings_value: f64,
    pub payout: f64,
    pub accepted_trade_count: u64,
    /// False when the participant made fewer accepted trades than required;
    /// such participants are paid their cash only.
    pub activity_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PayoutReport {
    pub event_id: String,
    pub selected_market: String,
    pub payout_seed: u64,
    pub outcomes: BTreeMap<String, Outcome>,
    pub final_prices: BTreeMap<String, f64>,
    pub payouts: Vec<ParticipantPayout>,
    /// Ledger cash plus market-maker receipts minus endowments.
    pub reconciliation_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CloseRequest {
    pub outcomes: BTreeMap<String, Outcome>,
    #[serde(default)]
    pub payout_seed: u64,
}

struct PendingQueue {
    orders: Vec<Order>,
    arrivals: Vec<Arrival>,
    /// Iteration the next drain will execute.
    next_iteration: u32,
    closed: bool,
}

struct EventState {
    status: EventStatus,
    ledger: Ledger,
    runners: Vec<MarketRunner>,
    agent_seq: Sequencer,
    accepted: BTreeMap<String, u64>,
    human_records: HashMap<u64, TradeRecord>,
    payout: Option<PayoutReport>,
}

struct Sessions {
    by_token: HashMap<String, String>,
    order: Vec<String>,
}

pub struct Event {
    config: EventConfig,
    index: BTreeMap<String, usize>,
    state: RwLock<EventState>,
    queues: Vec<Mutex<PendingQueue>>,
    sessions: RwLock<Sessions>,
    human_seq: AtomicU64,
}

fn new_token() -> String {
    let bytes: [u8; 16] = rand::rng().random();
    hex::encode(bytes)
}

impl Event {
    /// Opens every market at price 0.5. The clock is not started.
    pub fn create(config: EventConfig, pool: &AgentPool) -> Result<Self, ServiceError> {
        config.validate()?;
        for m in &config.markets {
            if m.paper.features.len() != pool.feature_dim {
                return Err(ServiceError::PoolSchemaMismatch {
                    market_id: m.market_id.clone(),
                    pool: pool.feature_dim,
                    paper: m.paper.features.len(),
                });
            }
        }
        let mut ledger = Ledger::new();
        let mut runners = Vec::with_capacity(config.markets.len());
        for (i, m) in config.markets.iter().enumerate() {
            let rng = child_rng(config.seed, &[STREAM_MARKET, i as u64]);
            runners.push(MarketRunner::open(&m.market_id, &m.paper.features, &pool.genomes, config.params(m), &mut ledger, rng)?);
        }
        let index = config.markets.iter().enumerate().map(|(i, m)| (m.market_id.clone(), i)).collect();
        let queues = config
            .markets
            .iter()
            .map(|_| {
                Mutex::new(PendingQueue {
                    orders: Vec::new(),
                    arrivals: Vec::new(),
                    next_iteration: 1,
                    closed: false,
                })
            })
            .collect();
        Ok(Self {
            config,
            index,
            state: RwLock::new(EventState {
                status: EventStatus::Pending,
                ledger,
                runners,
                agent_seq: Sequencer::new(),
                accepted: BTreeMap::new(),
                human_records: HashMap::new(),
                payout: None,
            }),
            queues,
            sessions: RwLock::new(Sessions {
                by_token: HashMap::new(),
                order: Vec::new(),
            }),
            human_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EventConfig {
        &self.config
    }

    pub fn event_id(&self) -> &str {
        &self.config.event_id
    }

    pub fn status(&self) -> EventStatus {
        self.state.read().unwrap().status
    }

    fn market_index(&self, market_id: &str) -> Result<usize, ServiceError> {
        self.index
            .get(market_id)
            .copied()
            .ok_or_else(|| ServiceError::UnknownMarket(market_id.to_string()))
    }

    /// Registers a participant and funds their cash account.
    pub fn register(&self, participant_id: &str) -> Result<Session, ServiceError> {
        if participant_id.is_empty() || participant_id.starts_with("agent-") {
            return Err(ServiceError::InvalidConfig(format!("invalid participant id {participant_id:?}")));
        }
        let mut sessions = self.sessions.write().unwrap();
        if sessions.order.iter().any(|p| p == participant_id) {
            return Err(ServiceError::DuplicateParticipant(participant_id.to_string()));
        }
        let token = new_token();
        sessions.by_token.insert(token.clone(), participant_id.to_string());
        sessions.order.push(participant_id.to_string());
        let mut st = self.state.write().unwrap();
        st.ledger.open_account(participant_id, self.config.participant_endowment);
        st.accepted.insert(participant_id.to_string(), 0);
        Ok(Session {
            participant_id: participant_id.to_string(),
            token,
        })
    }

    pub fn participant(&self, token: &str) -> Result<String, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .by_token
            .get(token)
            .cloned()
            .ok_or(ServiceError::InvalidToken)
    }

    /// Moves the event from Pending to Running.
    pub fn start(&self) -> Result<(), ServiceError> {
        let mut st = self.state.write().unwrap();
        if st.status != EventStatus::Pending {
            return Err(ServiceError::AlreadyRunning);
        }
        st.status = EventStatus::Running;
        Ok(())
    }

    /// Queues a single-share order for the market's next iteration.
    pub fn submit(&self, token: &str, market_id: &str, side: AssetSide, direction: Direction) -> Result<OrderAck, ServiceError> {
        let participant_id = self.participant(token)?;
        self.enqueue(participant_id, market_id, side, direction, None)
    }

    fn enqueue(
        &self,
        participant_id: String,
        market_id: &str,
        side: AssetSide,
        direction: Direction,
        sequence: Option<u64>,
    ) -> Result<OrderAck, ServiceError> {
        let i = self.market_index(market_id)?;
        let mut q = self.queues[i].lock().unwrap();
        if q.closed {
            return Err(ServiceError::MarketClosed(market_id.to_string()));
        }
        let sequence = match sequence {
            Some(s) => {
                self.human_seq.fetch_max(s + 1, Ordering::Relaxed);
                s
            }
            None => self.human_seq.fetch_add(1, Ordering::Relaxed),
        };
        let iteration = q.next_iteration;
        q.arrivals.push(Arrival {
            sequence,
            participant_id: participant_id.clone(),
            market_id: market_id.to_string(),
            side,
            direction,
            iteration,
        });
        q.orders.push(Order {
            trader_id: participant_id,
            trader_kind: TraderKind::Human,
            side,
            direction,
            sequence,
        });
        Ok(OrderAck {
            sequence,
            queued_at_iteration: iteration,
        })
    }

    /// Runs one iteration of every open market, in configuration order.
    /// Returns false once every market has closed.
    pub fn tick(&self) -> Result<bool, ServiceError> {
        let mut st = self.state.write().unwrap();
        if st.status != EventStatus::Running {
            return Ok(false);
        }
        let st = &mut *st;
        let mut any_open = false;
        for (i, runner) in st.runners.iter_mut().enumerate() {
            if !runner.state().is_open() {
                continue;
            }
            let orders = {
                let mut q = self.queues[i].lock().unwrap();
                q.next_iteration += 1;
                if runner.state().iteration() + 1 >= runner.state().max_iterations() {
                    q.closed = true;
                }
                std::mem::take(&mut q.orders)
            };
            let records = runner.step(&mut st.ledger, orders, &st.agent_seq)?;
            for r in records {
                if r.order.trader_kind == TraderKind::Human {
                    if r.accepted {
                        *st.accepted.entry(r.order.trader_id.clone()).or_default() += 1;
                    }
                    st.human_records.insert(r.order.sequence, r);
                }
            }
            if runner.state().is_exhausted() {
                runner.close()?;
            } else {
                any_open = true;
            }
        }
        if !any_open {
            st.status = EventStatus::Closed;
        }
        Ok(any_open)
    }

    /// Ticks until every market closes.
    pub fn run_to_completion(&self) -> Result<(), ServiceError> {
        while self.tick()? {}
        Ok(())
    }

    fn quote_of(runner: &MarketRunner) -> Quote {
        let s = runner.state();
        Quote {
            market_id: runner.market_id().to_string(),
            price_yes: s.price_yes(),
            price_no: s.price(AssetSide::WillNotReplicate),
            iteration: s.iteration(),
            max_iterations: s.max_iterations(),
            iterations_remaining: s.max_iterations() - s.iteration(),
            status: s.status(),
        }
    }

    pub fn quote(&self, market_id: &str) -> Result<Quote, ServiceError> {
        let i = self.market_index(market_id)?;
        Ok(Self::quote_of(&self.state.read().unwrap().runners[i]))
    }

    pub fn history(&self, market_id: &str) -> Result<Vec<PricePoint>, ServiceError> {
        let i = self.market_index(market_id)?;
        Ok(self.state.read().unwrap().runners[i].price_history().to_vec())
    }

    pub fn trade_log(&self, market_id: &str) -> Result<Vec<TradeRecord>, ServiceError> {
        let i = self.market_index(market_id)?;
        Ok(self.state.read().unwrap().runners[i].trade_log().to_vec())
    }

    /// The executed record of a participant's own order, once it has run.
    pub fn order_result(&self, token: &str, sequence: u64) -> Result<Option<TradeRecord>, ServiceError> {
        let participant_id = self.participant(token)?;
        let st = self.state.read().unwrap();
        Ok(st
            .human_records
            .get(&sequence)
            .filter(|r| r.order.trader_id == participant_id)
            .cloned())
    }

    pub fn portfolio(&self, token: &str) -> Result<Portfolio, ServiceError> {
        let participant_id = self.participant(token)?;
        let st = self.state.read().unwrap();
        let holdings = self
            .config
            .markets
            .iter()
            .map(|m| (m.market_id.clone(), st.ledger.holdings(&participant_id, &m.market_id)))
            .collect();
        Ok(Portfolio {
            cash: st.ledger.cash(&participant_id).unwrap_or(0.0),
            holdings,
            accepted_trade_count: st.accepted.get(&participant_id).copied().unwrap_or(0),
            participant_id,
        })
    }

    pub fn summary(&self) -> EventSummary {
        let st = self.state.read().unwrap();
        let markets = self
            .config
            .markets
            .iter()
            .zip(&st.runners)
            .map(|(m, r)| MarketSummary {
                market_id: m.market_id.clone(),
                claim_id: m.paper.claim_id.clone(),
                meta: m.paper.meta.clone(),
                quote: Self::quote_of(r),
                participating_agents: r.participant_count(),
                agent_trades: r.agent_trade_count(),
                human_trades: r.human_trade_count(),
            })
            .collect();
        EventSummary {
            event_id: self.config.event_id.clone(),
            status: st.status,
            iteration_period_ms: self.config.iteration_period_ms,
            markets,
        }
    }

    /// Human orders received so far, in sequence order.
    pub fn arrival_log(&self) -> ArrivalLog {
        let mut arrivals: Vec<Arrival> = self
            .queues
            .iter()
            .flat_map(|q| q.lock().unwrap().arrivals.clone())
            .collect();
        arrivals.sort_by_key(|a| a.sequence);
        ArrivalLog {
            participants: self.sessions.read().unwrap().order.clone(),
            arrivals,
        }
    }

    /// Re-runs an event from its arrival log with the clock in test mode.
    /// Each order is queued just before the iteration it was stamped with.
    pub fn replay(config: EventConfig, pool: &AgentPool, log: &ArrivalLog) -> Result<Self, ServiceError> {
        let event = Self::create(config, pool)?;
        for p in &log.participants {
            event.register(p)?;
        }
        let mut arrivals = log.arrivals.clone();
        arrivals.sort_by_key(|a| (a.iteration, a.sequence));
        let mut pending = arrivals.into_iter().peekable();
        let mut next = 1;
        event.start()?;
        loop {
            while let Some(a) = pending.next_if(|a| a.iteration <= next) {
                event.enqueue(a.participant_id, &a.market_id, a.side, a.direction, Some(a.sequence))?;
            }
            if !event.tick()? {
                break;
            }
            next += 1;
        }
        Ok(event)
    }

    /// Picks the paid market with `payout_seed` and pays every participant.
    pub fn close(&self, request: &CloseRequest) -> Result<PayoutReport, ServiceError> {
        let mut st = self.state.write().unwrap();
        match st.status {
            EventStatus::Closed => {}
            EventStatus::Settled => return Err(ServiceError::AlreadySettled),
            _ => return Err(ServiceError::MarketsStillOpen),
        }
        for m in &self.config.markets {
            if !request.outcomes.contains_key(&m.market_id) {
                return Err(ServiceError::MissingOutcome(m.market_id.clone()));
            }
        }
        let n = self.config.markets.len();
        let selected_index = child_rng(request.payout_seed, &[STREAM_PAYOUT]).random_range(0..n);
        let selected = self.config.markets[selected_index].market_id.clone();
        let outcome = request.outcomes[&selected];
        let st = &mut *st;
        let settled = st.runners[selected_index].settle(&st.ledger, outcome)?;
        let participants = self.sessions.read().unwrap().order.clone();
        let payouts = participants
            .into_iter()
            .map(|pid| {
                let cash = st.ledger.cash(&pid).unwrap_or(0.0);
                let holdings_value = st.ledger.holdings(&pid, &selected).value(outcome);
                let accepted = st.accepted.get(&pid).copied().unwrap_or(0);
                let activity_satisfied = accepted >= self.config.minimal_activity_requirement;
                let payout = if activity_satisfied {
                    settled.get(&pid).copied().unwrap_or(cash + holdings_value)
                } else {
                    cash
                };
                ParticipantPayout {
                    participant_id: pid,
                    cash,
                    holdings_value,
                    payout,
                    accepted_trade_count: accepted,
                    activity_satisfied,
                }
            })
            .collect();
        let report = PayoutReport {
            event_id: self.config.event_id.clone(),
            selected_market: selected,
            payout_seed: request.payout_seed,
            outcomes: request.outcomes.clone(),
            final_prices: st
                .runners
                .iter()
                .map(|r| (r.market_id().to_string(), r.state().final_price_yes().unwrap_or(0.5)))
                .collect(),
            payouts,
            reconciliation_gap: st.ledger.conservation_gap(),
        };
        st.status = EventStatus::Settled;
        st.payout = Some(report.clone());
        Ok(report)
    }

    pub fn payout_report(&self) -> Option<PayoutReport> {
        self.state.read().unwrap().payout.clone()
    }

    /// `marketId,iteration,priceYes` for every market.
    pub fn write_price_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let st = self.state.read().unwrap();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["marketId", "iteration", "priceYes"])?;
        for r in &st.runners {
            for p in r.price_history() {
                out.write_record([r.market_id(), &p.iteration.to_string(), &p.price_yes.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_trade_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let st = self.state.read().unwrap();
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "marketId",
            "iteration",
            "sequence",
            "traderId",
            "traderKind",
            "side",
            "direction",
            "accepted",
            "rejectReason",
            "priceYesAfter",
            "cashDelta",
        ])?;
        for r in &st.runners {
            for t in r.trade_log() {
                out.write_record([
                    r.market_id().to_string(),
                    t.executed_at_iteration.to_string(),
                    t.order.sequence.to_string(),
                    t.order.trader_id.clone(),
                    format!("{:?}", t.order.trader_kind),
                    format!("{:?}", t.order.side),
                    format!("{:?}", t.order.direction),
                    t.accepted.to_string(),
                    t.reject_reason.map(|x| format!("{x:?}")).unwrap_or_default(),
                    t.price_yes_after.to_string(),
                    t.cash_delta.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Empty until the event is settled.
    pub fn write_payout_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "participantId",
            "selectedMarket",
            "cash",
            "holdingsValue",
            "payout",
            "acceptedTradeCount",
            "activitySatisfied",
        ])?;
        if let Some(report) = self.payout_report() {
            for p in &report.payouts {
                out.write_record([
                    p.participant_id.clone(),
                    report.selected_market.clone(),
                    p.cash.to_string(),
                    p.holdings_value.to_string(),
                    p.payout.to_string(),
                    p.accepted_trade_count.to_string(),
                    p.activity_satisfied.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentGenome;
    use crate::dataset::FeatureSchema;

    fn schema() -> FeatureSchema {
        FeatureSchema::default_schema()
    }

    fn silent_pool() -> AgentPool {
        AgentPool::new(&schema(), Vec::new())
    }

    fn config(markets: usize, max_iterations: u32) -> EventConfig {
        let dim = schema().dim();
        EventConfig {
            event_id: "ev".into(),
            markets: (0..markets)
                .map(|i| MarketConfig {
                    market_id: format!("M{}", i + 1),
                    paper: PaperInfo {
                        claim_id: format!("c{i}"),
                        features: vec![0.1 * i as f64; dim],
                        meta: BTreeMap::new(),
                    },
                    b: 10.0,
                    max_iterations,
                })
                .collect(),
            iteration_period_ms: 0,
            participant_endowment: 25.0,
            agent_pool_ref: None,
            sampling_rate: 0.05,
            minimal_activity_requirement: 1,
            allow_agent_sell: false,
            seed: 1,
        }
    }

    const YES: AssetSide = AssetSide::WillReplicate;
    const BUY: Direction = Direction::Buy;

    #[test]
    fn four_markets_open_at_half() {
        let ev = Event::create(config(4, 10), &silent_pool()).unwrap();
        let s = ev.summary();
        assert_eq!(s.markets.len(), 4);
        for m in s.markets {
            assert_eq!(m.quote.price_yes, 0.5);
            assert_eq!(m.quote.price_no, 0.5);
            assert_eq!(m.quote.iteration, 0);
            assert_eq!(m.quote.status, MarketStatus::Open);
        }
        assert_eq!(ev.status(), EventStatus::Pending);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut cfg = config(1, 10);
        cfg.markets[0].paper.features.pop();
        assert!(matches!(
            Event::create(cfg, &silent_pool()),
            Err(ServiceError::PoolSchemaMismatch { pool: 41, paper: 40, .. })
        ));
    }

    #[test]
    fn silent_event_closes_at_half() {
        let ev = Event::create(config(2, 50), &silent_pool()).unwrap();
        ev.start().unwrap();
        assert!(matches!(ev.start(), Err(ServiceError::AlreadyRunning)));
        ev.run_to_completion().unwrap();
        assert_eq!(ev.status(), EventStatus::Closed);
        for m in ["M1", "M2"] {
            let h = ev.history(m).unwrap();
            assert_eq!(h.first().unwrap().price_yes, 0.5);
            assert_eq!(h.last().unwrap().price_yes, 0.5);
            assert_eq!(h.last().unwrap().iteration, 50);
        }
    }

    #[test]
    fn pending_orders_execute_first_iteration_in_fifo_order() {
        let ev = Event::create(config(1, 5), &silent_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        let b = ev.register("bob").unwrap();
        let ack_b = ev.submit(&b.token, "M1", YES, BUY).unwrap();
        let ack_a = ev.submit(&a.token, "M1", YES, BUY).unwrap();
        assert_eq!(ack_b.queued_at_iteration, 1);
        assert!(ack_b.sequence < ack_a.sequence);
        ev.start().unwrap();
        ev.tick().unwrap();
        let log = ev.trade_log("M1").unwrap();
        assert_eq!(log[0].order.trader_id, "bob");
        assert_eq!(log[1].order.trader_id, "alice");
        assert!(log[1].price_yes_after > log[0].price_yes_after);
        // submitted after iteration 1 ran
        let ack = ev.submit(&a.token, "M1", YES, Direction::Sell).unwrap();
        assert_eq!(ack.queued_at_iteration, 2);
        ev.tick().unwrap();
        let rec = ev.order_result(&a.token, ack.sequence).unwrap().unwrap();
        assert!(rec.accepted);
        assert_eq!(rec.executed_at_iteration, 2);
        assert!(ev.order_result(&b.token, ack.sequence).unwrap().is_none());
    }

    #[test]
    fn invalid_token_and_unknown_market() {
        let ev = Event::create(config(1, 5), &silent_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        assert!(matches!(ev.submit("nope", "M1", YES, BUY), Err(ServiceError::InvalidToken)));
        assert!(matches!(ev.submit(&a.token, "M9", YES, BUY), Err(ServiceError::UnknownMarket(_))));
        assert!(matches!(ev.register("alice"), Err(ServiceError::DuplicateParticipant(_))));
    }

    #[test]
    fn orders_after_close_are_refused() {
        let ev = Event::create(config(1, 3), &silent_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        ev.start().unwrap();
        ev.run_to_completion().unwrap();
        assert!(matches!(ev.submit(&a.token, "M1", YES, BUY), Err(ServiceError::MarketClosed(_))));
    }

    #[test]
    fn sell_without_holdings_is_acknowledged_then_rejected() {
        let ev = Event::create(config(1, 3), &silent_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        let ack = ev.submit(&a.token, "M1", YES, Direction::Sell).unwrap();
        ev.start().unwrap();
        ev.tick().unwrap();
        let rec = ev.order_result(&a.token, ack.sequence).unwrap().unwrap();
        assert!(!rec.accepted);
        assert_eq!(rec.reject_reason, Some(crate::market::RejectReason::InsufficientHoldings));
    }

    #[test]
    fn payout_is_cash_plus_selected_holdings() {
        let ev = Event::create(config(4, 4), &silent_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        let idle = ev.register("idle").unwrap();
        for m in ["M1", "M2", "M3", "M4"] {
            ev.submit(&a.token, m, YES, BUY).unwrap();
        }
        ev.start().unwrap();
        assert!(matches!(ev.close(&CloseRequest { outcomes: BTreeMap::new(), payout_seed: 0 }), Err(ServiceError::MarketsStillOpen)));
        ev.run_to_completion().unwrap();
        let mut outcomes: BTreeMap<String, Outcome> =
            ["M1", "M2", "M3"].iter().map(|m| (m.to_string(), Outcome::Replicated)).collect();
        assert!(matches!(
            ev.close(&CloseRequest { outcomes: outcomes.clone(), payout_seed: 3 }),
            Err(ServiceError::MissingOutcome(m)) if m == "M4"
        ));
        outcomes.insert("M4".into(), Outcome::Replicated);
        let req = CloseRequest { outcomes, payout_seed: 3 };
        let report = ev.close(&req).unwrap();
        let pa = &report.payouts[0];
        let portfolio = ev.portfolio(&a.token).unwrap();
        assert!((pa.payout - (portfolio.cash + 1.0)).abs() < 1e-9);
        assert!(pa.activity_satisfied);
        let pi = &report.payouts[1];
        assert_eq!(pi.participant_id, "idle");
        assert!(!pi.activity_satisfied);
        assert_eq!(pi.payout, 25.0);
        assert!(report.reconciliation_gap.abs() < 1e-9);
        assert!(matches!(ev.close(&req), Err(ServiceError::AlreadySettled)));
        let _ = idle;

        // same seed, same market
        let ev2 = Event::create(config(4, 4), &silent_pool()).unwrap();
        ev2.start().unwrap();
        ev2.run_to_completion().unwrap();
        assert_eq!(ev2.close(&req).unwrap().selected_market, report.selected_market);
    }

    fn eager_pool() -> AgentPool {
        let dim = schema().dim();
        let genomes = (0..20)
            .map(|id| AgentGenome {
                agent_id: id,
                weights: vec![0.0; dim],
                mask: vec![true; dim],
                bias: if id % 2 == 0 { 1.5 } else { -0.5 },
                exemplars: vec![vec![1.0; dim]],
                similarity_threshold: 0.0,
                margin: 0.02,
                endowment: 25.0,
            })
            .collect();
        AgentPool::new(&schema(), genomes)
    }

    #[test]
    fn replay_reproduces_event() {
        let pool = eager_pool();
        let cfg = config(2, 40);
        let ev = Event::create(cfg.clone(), &pool).unwrap();
        let a = ev.register("alice").unwrap();
        let b = ev.register("bob").unwrap();
        ev.submit(&a.token, "M1", YES, BUY).unwrap();
        ev.start().unwrap();
        for k in 0..40 {
            if k % 3 == 0 {
                ev.submit(&b.token, "M2", AssetSide::WillNotReplicate, BUY).unwrap();
            }
            if k % 7 == 0 {
                ev.submit(&a.token, "M1", YES, BUY).unwrap();
            }
            ev.tick().unwrap();
        }
        assert_eq!(ev.status(), EventStatus::Closed);
        let log = ev.arrival_log();
        let again = Event::replay(cfg, &pool, &log).unwrap();
        for m in ["M1", "M2"] {
            assert_eq!(again.trade_log(m).unwrap(), ev.trade_log(m).unwrap());
            assert_eq!(again.history(m).unwrap(), ev.history(m).unwrap());
        }
        assert!(ev.summary().markets[0].agent_trades > 0);
        assert_eq!(again.arrival_log(), log);
    }

    #[test]
    fn agent_trades_precede_human_trades_in_each_iteration() {
        let ev = Event::create(config(1, 30), &eager_pool()).unwrap();
        let a = ev.register("alice").unwrap();
        ev.start().unwrap();
        for _ in 0..30 {
            ev.submit(&a.token, "M1", YES, BUY).unwrap();
            ev.tick().unwrap();
        }
        let log = ev.trade_log("M1").unwrap();
        for w in log.windows(2) {
            assert!(w[0].executed_at_iteration <= w[1].executed_at_iteration);
            if w[0].executed_at_iteration == w[1].executed_at_iteration {
                assert!(!(w[0].order.trader_kind == TraderKind::Human && w[1].order.trader_kind == TraderKind::Agent));
            }
        }
    }
}
