//! HTTP front end for a live session.
//!
//! One thread owns the [`LiveSession`]; handlers talk to it over a channel,
//! so commands are applied strictly in arrival order and snapshots are
//! consistent copies. Accepted events are fanned out to event-stream
//! subscribers through a broadcast channel.

use std::convert::Infallible;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio_stream::wrappers::BroadcastStream;
use tower_http::cors::CorsLayer;

use hapticauth_core::live::{ConsoleCommand, EventEnvelope, LiveSession, Rejection, ScheduleEntry, SessionSnapshot};

const QUEUE_DEPTH: usize = 64;
const BROADCAST_DEPTH: usize = 1024;

type Subscription = (Vec<EventEnvelope>, broadcast::Receiver<EventEnvelope>);

enum Request {
    Command {
        command: ConsoleCommand,
        reply: oneshot::Sender<Result<Result<Vec<EventEnvelope>, Rejection>, String>>,
    },
    Snapshot {
        reply: oneshot::Sender<SessionSnapshot>,
    },
    Subscribe {
        after: Option<u64>,
        reply: oneshot::Sender<Subscription>,
    },
}

/// Cheap, cloneable handle to the session thread.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Request>,
}

/// Source of "now" in virtual milliseconds.
pub type Clock = Box<dyn FnMut() -> u64 + Send>;

/// Maps elapsed wall-clock time onto the session's virtual clock, starting
/// from wherever the session currently stands.
pub fn wall_clock(session: &LiveSession) -> Clock {
    let base = session.snapshot().now;
    let start = Instant::now();
    Box::new(move || base + start.elapsed().as_millis() as u64)
}

/// Starts the session thread. It exits once every handle is dropped.
pub fn spawn(mut session: LiveSession, mut clock: Clock) -> ServiceHandle {
    let (tx, mut rx) = mpsc::channel::<Request>(QUEUE_DEPTH);
    let (events_tx, _) = broadcast::channel::<EventEnvelope>(BROADCAST_DEPTH);
    std::thread::Builder::new()
        .name("live-session".into())
        .spawn(move || {
            while let Some(req) = rx.blocking_recv() {
                match req {
                    Request::Command { command, reply } => {
                        let outcome = session.apply(command, clock()).map_err(|e| e.to_string());
                        if let Ok(Ok(events)) = &outcome {
                            for ev in events {
                                // no subscribers is fine
                                let _ = events_tx.send(ev.clone());
                            }
                        }
                        let _ = reply.send(outcome);
                    }
                    Request::Snapshot { reply } => {
                        let _ = reply.send(session.snapshot());
                    }
                    Request::Subscribe { after, reply } => {
                        let history = session
                            .events()
                            .iter()
                            .filter(|e| after.is_none_or(|a| e.seq > a))
                            .cloned()
                            .collect();
                        let _ = reply.send((history, events_tx.subscribe()));
                    }
                }
            }
        })
        .expect("spawn session thread");
    ServiceHandle { tx }
}

impl ServiceHandle {
    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| ServiceError::Unavailable)?;
        rx.await.map_err(|_| ServiceError::Unavailable)
    }

    pub async fn snapshot(&self) -> Result<SessionSnapshot, ServiceError> {
        self.call(|reply| Request::Snapshot { reply }).await
    }

    pub async fn command(&self, command: ConsoleCommand) -> Result<Result<Vec<EventEnvelope>, Rejection>, ServiceError> {
        self.call(|reply| Request::Command { command, reply })
            .await?
            .map_err(ServiceError::Fault)
    }

    async fn subscribe(&self, after: Option<u64>) -> Result<Subscription, ServiceError> {
        self.call(|reply| Request::Subscribe { after, reply }).await
    }
}

#[derive(Debug)]
pub enum ServiceError {
    Unavailable,
    Fault(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(json!({ "accepted": false, "error": ErrorBody { code, message } }))).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        match self {
            ServiceError::Unavailable => error_response(
                StatusCode::SERVICE_UNAVAILABLE,
                "unavailable",
                "session engine has stopped".into(),
            ),
            ServiceError::Fault(message) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "engine_fault", message),
        }
    }
}

pub fn router(handle: ServiceHandle) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/schedule", get(get_schedule))
        .route("/commands", post(post_command))
        .route("/events", get(get_events))
        .layer(CorsLayer::permissive())
        .with_state(handle)
}

async fn get_session(State(h): State<ServiceHandle>) -> Result<Json<SessionSnapshot>, ServiceError> {
    Ok(Json(h.snapshot().await?))
}

#[derive(Serialize)]
struct ScheduleBody {
    participant_id: u32,
    trials: Vec<ScheduleEntry>,
}

async fn get_schedule(State(h): State<ServiceHandle>) -> Result<Json<ScheduleBody>, ServiceError> {
    let snap = h.snapshot().await?;
    Ok(Json(ScheduleBody {
        participant_id: snap.participant_id,
        trials: snap.schedule,
    }))
}

async fn post_command(
    State(h): State<ServiceHandle>,
    body: Result<Json<ConsoleCommand>, JsonRejection>,
) -> Response {
    let command = match body {
        Ok(Json(c)) => c,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "malformed_command", e.body_text()),
    };
    match h.command(command).await {
        Ok(Ok(events)) => (StatusCode::OK, Json(json!({ "accepted": true, "events": events }))).into_response(),
        Ok(Err(rejection)) => {
            (StatusCode::CONFLICT, Json(json!({ "accepted": false, "rejection": rejection }))).into_response()
        }
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

fn sse_event(env: &EventEnvelope) -> Event {
    let data = serde_json::to_value(env).expect("events serialize");
    let kind = data["event"]["kind"].as_str().unwrap_or("event").to_string();
    Event::default().id(env.seq.to_string()).event(kind).data(data.to_string())
}

/// Past events after `?after=` (or `Last-Event-ID`), then live ones.
async fn get_events(
    State(h): State<ServiceHandle>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let (history, rx) = h.subscribe(q.after.or(last_id)).await?;
    let past = stream::iter(history.into_iter().map(|e| Ok(sse_event(&e))));
    // a lagging subscriber is cut off and reconnects with Last-Event-ID
    let live = BroadcastStream::new(rx)
        .take_while(|r| std::future::ready(r.is_ok()))
        .filter_map(|r| std::future::ready(r.ok().map(|e| Ok(sse_event(&e)))));
    Ok(Sse::new(past.chain(live)).keep_alive(KeepAlive::default()))
}
