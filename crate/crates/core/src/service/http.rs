//! JSON-over-HTTP front end and the iteration clock.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/events` | create an event from an [`EventConfig`] |
//! | GET | `/events/{event}` | markets, quotes and status |
//! | POST | `/events/{event}/sessions` | register `{participantId}`, returns a token |
//! | POST | `/events/{event}/open` | start the clock |
//! | GET | `/events/{event}/markets/{market}/quote` | |
//! | GET | `/events/{event}/markets/{market}/history` | |
//! | GET | `/events/{event}/markets/{market}/trades` | trade log |
//! | POST | `/events/{event}/markets/{market}/orders` | `{side, direction}`, token required |
//! | GET | `/events/{event}/orders/{sequence}` | own executed order, token required |
//! | GET | `/events/{event}/portfolio` | token required |
//! | POST | `/events/{event}/close` | `{outcomes, payoutSeed}` |
//! | GET | `/events/{event}/payouts` | |
//! | GET | `/events/{event}/arrivals` | human order arrival log |
//! | GET | `/events/{event}/stats/{prices,trades,payouts}.csv` | |

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{CloseRequest, Event, EventConfig, ServiceError, TOKEN_HEADER};
use crate::agents::AgentPool;
use crate::market::{AssetSide, Direction};

/// Shared state of a running service.
pub struct Service {
    events: RwLock<HashMap<String, Arc<Event>>>,
    default_pool: Option<Arc<AgentPool>>,
}

impl Service {
    pub fn new(default_pool: Option<AgentPool>) -> Arc<Self> {
        Arc::new(Self {
            events: RwLock::new(HashMap::new()),
            default_pool: default_pool.map(Arc::new),
        })
    }

    pub fn event(&self, event_id: &str) -> Result<Arc<Event>, ServiceError> {
        self.events
            .read()
            .unwrap()
            .get(event_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownEvent(event_id.to_string()))
    }

    pub fn create_event(&self, config: EventConfig) -> Result<Arc<Event>, ServiceError> {
        if self.events.read().unwrap().contains_key(&config.event_id) {
            return Err(ServiceError::DuplicateEventId(config.event_id));
        }
        let event = match &config.agent_pool_ref {
            Some(path) => Event::create(config.clone(), &AgentPool::load(path)?)?,
            None => Event::create(config, self.default_pool.as_deref().ok_or(ServiceError::NoPool)?)?,
        };
        let mut events = self.events.write().unwrap();
        if events.contains_key(event.event_id()) {
            return Err(ServiceError::DuplicateEventId(event.event_id().to_string()));
        }
        let event = Arc::new(event);
        events.insert(event.event_id().to_string(), event.clone());
        Ok(event)
    }

    /// Starts the event's clock on the current tokio runtime.
    pub fn open_event(&self, event_id: &str) -> Result<(), ServiceError> {
        let event = self.event(event_id)?;
        event.start()?;
        tokio::spawn(run_clock(event));
        Ok(())
    }
}

/// Ticks `event` every `iterationPeriodMs` until all its markets close.
pub async fn run_clock(event: Arc<Event>) {
    let period = event.config().iteration_period_ms;
    let mut interval = (period > 0).then(|| {
        let mut i = tokio::time::interval(Duration::from_millis(period));
        i.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        i
    });
    loop {
        match &mut interval {
            Some(i) => {
                i.tick().await;
            }
            None => tokio::task::yield_now().await,
        }
        match event.tick() {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                tracing::error!(event = event.event_id(), error = %e, "clock stopped");
                break;
            }
        }
    }
    tracing::info!(event = event.event_id(), "all markets closed");
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl ServiceError {
    fn code(&self) -> (StatusCode, &'static str) {
        use ServiceError::*;
        match self {
            UnknownEvent(_) => (StatusCode::NOT_FOUND, "UnknownEvent"),
            UnknownMarket(_) => (StatusCode::NOT_FOUND, "UnknownMarket"),
            InvalidToken => (StatusCode::UNAUTHORIZED, "InvalidToken"),
            MarketClosed(_) => (StatusCode::CONFLICT, "MarketClosed"),
            DuplicateEventId(_) => (StatusCode::CONFLICT, "DuplicateEventId"),
            DuplicateParticipant(_) => (StatusCode::CONFLICT, "DuplicateParticipant"),
            PoolSchemaMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "PoolSchemaMismatch"),
            AlreadyRunning => (StatusCode::CONFLICT, "AlreadyRunning"),
            MarketsStillOpen => (StatusCode::CONFLICT, "MarketsStillOpen"),
            MissingOutcome(_) => (StatusCode::UNPROCESSABLE_ENTITY, "MissingOutcome"),
            AlreadySettled => (StatusCode::CONFLICT, "AlreadySettled"),
            NoPool => (StatusCode::UNPROCESSABLE_ENTITY, "NoPool"),
            InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidConfig"),
            Pool(crate::agents::PoolError::SchemaMismatch { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, "PoolSchemaMismatch"),
            Pool(_) => (StatusCode::UNPROCESSABLE_ENTITY, "PoolUnavailable"),
            Runner(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, error) = self.code();
        (
            status,
            Json(ErrorBody {
                error,
                message: self.to_string(),
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;
type Shared = State<Arc<Service>>;

fn token(headers: &HeaderMap) -> Result<&str, ServiceError> {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or(ServiceError::InvalidToken)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionRequest {
    pub participant_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderRequest {
    pub side: AssetSide,
    pub direction: Direction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Created {
    pub event_id: String,
}

async fn create_event(State(svc): Shared, Json(config): Json<EventConfig>) -> Result<(StatusCode, Json<Created>), ServiceError> {
    let event = svc.create_event(config)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            event_id: event.event_id().to_string(),
        }),
    ))
}

async fn event_summary(State(svc): Shared, Path(ev): Path<String>) -> ApiResult<super::EventSummary> {
    Ok(Json(svc.event(&ev)?.summary()))
}

async fn register(State(svc): Shared, Path(ev): Path<String>, Json(req): Json<SessionRequest>) -> ApiResult<super::Session> {
    Ok(Json(svc.event(&ev)?.register(&req.participant_id)?))
}

async fn open(State(svc): Shared, Path(ev): Path<String>) -> ApiResult<super::EventSummary> {
    svc.open_event(&ev)?;
    Ok(Json(svc.event(&ev)?.summary()))
}

async fn quote(State(svc): Shared, Path((ev, m)): Path<(String, String)>) -> ApiResult<super::Quote> {
    Ok(Json(svc.event(&ev)?.quote(&m)?))
}

async fn history(State(svc): Shared, Path((ev, m)): Path<(String, String)>) -> ApiResult<Vec<crate::runner::PricePoint>> {
    Ok(Json(svc.event(&ev)?.history(&m)?))
}

async fn trades(State(svc): Shared, Path((ev, m)): Path<(String, String)>) -> ApiResult<Vec<crate::market::TradeRecord>> {
    Ok(Json(svc.event(&ev)?.trade_log(&m)?))
}

async fn order(
    State(svc): Shared,
    Path((ev, m)): Path<(String, String)>,
    headers: HeaderMap,
    Json(req): Json<OrderRequest>,
) -> Result<(StatusCode, Json<super::OrderAck>), ServiceError> {
    let ack = svc.event(&ev)?.submit(token(&headers)?, &m, req.side, req.direction)?;
    Ok((StatusCode::ACCEPTED, Json(ack)))
}

async fn order_result(State(svc): Shared, Path((ev, seq)): Path<(String, u64)>, headers: HeaderMap) -> Response {
    match svc.event(&ev).and_then(|e| e.order_result(token(&headers)?, seq)) {
        Ok(Some(r)) => Json(r).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn portfolio(State(svc): Shared, Path(ev): Path<String>, headers: HeaderMap) -> ApiResult<super::Portfolio> {
    Ok(Json(svc.event(&ev)?.portfolio(token(&headers)?)?))
}

async fn close(State(svc): Shared, Path(ev): Path<String>, Json(req): Json<CloseRequest>) -> ApiResult<super::PayoutReport> {
    Ok(Json(svc.event(&ev)?.close(&req)?))
}

async fn payouts(State(svc): Shared, Path(ev): Path<String>) -> Response {
    match svc.event(&ev).map(|e| e.payout_report()) {
        Ok(Some(r)) => Json(r).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn arrivals(State(svc): Shared, Path(ev): Path<String>) -> ApiResult<super::ArrivalLog> {
    Ok(Json(svc.event(&ev)?.arrival_log()))
}

async fn stats(State(svc): Shared, Path((ev, file)): Path<(String, String)>) -> Response {
    let event = match svc.event(&ev) {
        Ok(e) => e,
        Err(e) => return e.into_response(),
    };
    let mut buf = Vec::new();
    let written = match file.as_str() {
        "prices.csv" => event.write_price_csv(&mut buf),
        "trades.csv" => event.write_trade_csv(&mut buf),
        "payouts.csv" => event.write_payout_csv(&mut buf),
        _ => return StatusCode::NOT_FOUND.into_response(),
    };
    match written {
        Ok(()) => ([(header::CONTENT_TYPE, "text/csv")], buf).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/events", post(create_event))
        .route("/events/{event}", get(event_summary))
        .route("/events/{event}/sessions", post(register))
        .route("/events/{event}/open", post(open))
        .route("/events/{event}/markets/{market}/quote", get(quote))
        .route("/events/{event}/markets/{market}/history", get(history))
        .route("/events/{event}/markets/{market}/trades", get(trades))
        .route("/events/{event}/markets/{market}/orders", post(order))
        .route("/events/{event}/orders/{sequence}", get(order_result))
        .route("/events/{event}/portfolio", get(portfolio))
        .route("/events/{event}/close", post(close))
        .route("/events/{event}/payouts", get(payouts))
        .route("/events/{event}/arrivals", get(arrivals))
        .route("/events/{event}/stats/{file}", get(stats))
        .with_state(svc)
}

/// Serves `svc` on `listener` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, svc: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}
