//! HTTP, SSE and WebSocket API over orchestrator sessions.
//!
//! One orchestrator session per HTTP session. A session runs one turn at a
//! time; a second message while a turn is in flight gets 409. Every event is
//! written to the JSONL store before it is broadcast, so stream readers can
//! backfill from disk and then follow live without gaps.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convroutine::backend::ChatBackend;
use convroutine::clock::Clock;
use convroutine::orchestrator::{Orchestrator, Session, SessionStatus, TurnError, TurnResult};
use convroutine::scenario::{Scenario, ScenarioKind, ScenarioOptions};
use convroutine::telemetry::{
    is_valid_session_id, usage_series, EventBody, EventStore, SessionEvent, SessionRecorder, TelemetryError,
};
use futures_util::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

use crate::runtime::{build_scenario, BackendFactory};

struct SessionState {
    session: Session,
    recorder: SessionRecorder,
}

/// What `GET /sessions/{id}` reports. Kept apart from the session so reads
/// never wait on a running turn.
#[derive(Clone, Serialize)]
struct Snapshot {
    active_agent: String,
    status: SessionStatus,
    total_tokens: u64,
    backend_calls: usize,
}

impl Snapshot {
    fn of(s: &Session) -> Self {
        Self {
            active_agent: s.active_agent.clone(),
            status: s.status,
            total_tokens: s.total_tokens(),
            backend_calls: s.usage_log.len(),
        }
    }
}

struct LiveSession {
    scenario: Arc<Scenario>,
    backend: Arc<dyn ChatBackend>,
    state: Mutex<SessionState>,
    snapshot: Mutex<Snapshot>,
    busy: AtomicBool,
    events: broadcast::Sender<SessionEvent>,
}

/// Clears the busy flag however the request ends.
struct BusyGuard(Arc<LiveSession>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

pub struct AppState {
    scenarios: HashMap<String, Arc<Scenario>>,
    backends: HashMap<String, BackendFactory>,
    default_scenario: String,
    store: Arc<dyn EventStore>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
}

impl AppState {
    /// Builds every scenario up front so a bad manifest fails at startup.
    /// `kinds[0]` is the default for `POST /sessions` without a scenario.
    pub fn new(
        kinds: &[(ScenarioKind, BackendFactory)],
        opts: &ScenarioOptions,
        model: Option<&str>,
        store: Arc<dyn EventStore>,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Self> {
        let mut scenarios = HashMap::new();
        let mut backends = HashMap::new();
        for (kind, factory) in kinds {
            let name = kind.name();
            scenarios.insert(name.clone(), Arc::new(build_scenario(kind, opts, model)?));
            backends.insert(name, factory.clone());
        }
        let default_scenario = kinds
            .first()
            .map(|(k, _)| k.name())
            .ok_or_else(|| anyhow::anyhow!("no scenario configured"))?;
        Ok(Self {
            scenarios,
            backends,
            default_scenario,
            store,
            clock,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn live(&self, id: &str) -> Option<Arc<LiveSession>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/agents", get(list_agents))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/usage", get(session_usage))
        .route("/sessions/{id}/ws", get(session_ws))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown session {id:?}"))
}

#[derive(Serialize)]
struct AgentInfo<'a> {
    scenario: &'a str,
    name: &'a str,
    entry: bool,
    model: &'a str,
    tools: &'a [String],
}

async fn list_agents(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let mut names: Vec<&String> = app.scenarios.keys().collect();
    names.sort();
    let mut out = Vec::new();
    for name in names {
        let s = &app.scenarios[name];
        for a in s.agents.iter() {
            out.push(AgentInfo {
                scenario: name,
                name: &a.name,
                entry: a.name == s.entry_agent,
                model: &a.model,
                tools: &a.tool_names,
            });
        }
    }
    Json(json!(out))
}

#[derive(Deserialize, Default)]
struct CreateSession {
    scenario: Option<String>,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Option<Json<CreateSession>>) -> Response {
    let wanted = body
        .and_then(|Json(b)| b.scenario)
        .unwrap_or_else(|| app.default_scenario.clone());
    let (Some(scenario), Some(factory)) = (app.scenarios.get(&wanted), app.backends.get(&wanted)) else {
        let mut known: Vec<&String> = app.scenarios.keys().collect();
        known.sort();
        return error(
            StatusCode::BAD_REQUEST,
            format!("unknown scenario {wanted:?}; available: {known:?}"),
        );
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(&id, &scenario.entry_agent, &scenario.agents).expect("entry agent is registered");
    let (events, _) = broadcast::channel(256);
    let live = Arc::new(LiveSession {
        scenario: scenario.clone(),
        backend: factory.make(),
        snapshot: Mutex::new(Snapshot::of(&session)),
        state: Mutex::new(SessionState {
            session,
            recorder: SessionRecorder::new(app.store.clone(), app.clock.clone(), &id),
        }),
        busy: AtomicBool::new(false),
        events,
    });
    app.sessions.lock().unwrap().insert(id.clone(), live);
    (
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "active_agent": scenario.entry_agent, "scenario": wanted })),
    )
        .into_response()
}

async fn session_info(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(live) = app.live(&id) else {
        return not_found(&id);
    };
    let busy = live.busy.load(Ordering::Acquire);
    let snap = live.snapshot.lock().unwrap().clone();
    Json(json!({
        "session_id": id,
        "active_agent": snap.active_agent,
        "status": snap.status,
        "total_tokens": snap.total_tokens,
        "backend_calls": snap.backend_calls,
        "busy": busy,
    }))
    .into_response()
}

#[derive(Deserialize)]
struct PostMessage {
    text: String,
}

#[derive(Serialize)]
struct TurnResponse {
    #[serde(flatten)]
    result: TurnResult,
    active_agent: String,
    status: SessionStatus,
}

enum TurnOutcome {
    Done(TurnResult, String, SessionStatus),
    Rejected(StatusCode, String),
    Failed(String, Box<TurnResult>),
}

fn record(st: &mut SessionState, tx: &broadcast::Sender<SessionEvent>, body: EventBody) -> Result<(), TelemetryError> {
    let e = st.recorder.record(body)?;
    // No subscribers is fine.
    let _ = tx.send(e);
    Ok(())
}

fn run_turn(live: &LiveSession, text: &str) -> TurnOutcome {
    let mut guard = live.state.lock().unwrap();
    let st = &mut *guard;
    let orch = Orchestrator::new(live.backend.as_ref(), &live.scenario.registry, &live.scenario.agents);
    let outcome = orch.run_turn(&mut st.session, text);
    let events = match &outcome {
        Ok(r) => r.events.clone(),
        Err(TurnError::Failed { partial, .. }) => partial.events.clone(),
        Err(_) => Vec::new(),
    };
    let mut telemetry = events.into_iter().try_for_each(|e| record(st, &live.events, e.into()));
    if telemetry.is_ok() && st.session.status != SessionStatus::Open {
        let end = EventBody::SessionEnd {
            status: st.session.status,
            total_tokens: st.session.total_tokens(),
        };
        telemetry = record(st, &live.events, end);
    }
    *live.snapshot.lock().unwrap() = Snapshot::of(&st.session);
    if let Err(e) = telemetry {
        eprintln!("session {}: telemetry write failed: {e}", st.session.session_id);
    }
    match outcome {
        Ok(r) => TurnOutcome::Done(r, st.session.active_agent.clone(), st.session.status),
        Err(TurnError::Failed { reason, partial }) => TurnOutcome::Failed(reason.to_string(), partial),
        Err(TurnError::Backend(e)) => TurnOutcome::Rejected(StatusCode::BAD_GATEWAY, e.to_string()),
        Err(e @ TurnError::SessionClosed(_)) => TurnOutcome::Rejected(StatusCode::CONFLICT, e.to_string()),
        Err(e @ TurnError::EmptyInput) => TurnOutcome::Rejected(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> Response {
    let Some(live) = app.live(&id) else {
        return not_found(&id);
    };
    if live.busy.swap(true, Ordering::AcqRel) {
        return error(StatusCode::CONFLICT, "a turn is already running for this session");
    }
    let guard = BusyGuard(live.clone());
    let outcome = tokio::task::spawn_blocking(move || {
        let out = run_turn(&guard.0, &body.text);
        drop(guard);
        out
    })
    .await;
    match outcome {
        Ok(TurnOutcome::Done(result, active_agent, status)) => Json(TurnResponse {
            result,
            active_agent,
            status,
        })
        .into_response(),
        Ok(TurnOutcome::Rejected(code, message)) => error(code, message),
        Ok(TurnOutcome::Failed(reason, partial)) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "error": reason, "partial": partial })),
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("turn panicked: {e}")),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Keep the stream open for new events (default true).
    follow: Option<bool>,
    /// Only events with a larger seq.
    after: Option<u64>,
}

/// Stored events after `after`, then live ones when `follow` is set and the
/// session is active in this process.
fn event_stream(
    app: &AppState,
    id: &str,
    after: u64,
    follow: bool,
) -> Result<BoxStream<'static, SessionEvent>, Box<Response>> {
    if !is_valid_session_id(id) {
        return Err(Box::new(not_found(id)));
    }
    let live = app.live(id);
    // Subscribe before reading the backlog so nothing falls between the two.
    let rx = live.as_ref().filter(|_| follow).map(|l| l.events.subscribe());
    let backlog = match app.store.load(id) {
        Ok(events) => events,
        Err(TelemetryError::UnknownSession(_)) if live.is_some() => Vec::new(),
        Err(TelemetryError::UnknownSession(_)) => return Err(Box::new(not_found(id))),
        Err(e) => return Err(Box::new(error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))),
    };
    let backlog: Vec<SessionEvent> = backlog.into_iter().filter(|e| e.seq > after).collect();
    let last = backlog.last().map_or(after, |e| e.seq);
    let head = stream::iter(backlog);
    Ok(match rx {
        Some(rx) => {
            let tail = BroadcastStream::new(rx).filter_map(move |e| async move { e.ok().filter(|e| e.seq > last) });
            head.chain(tail).boxed()
        }
        None => head.boxed(),
    })
}

fn last_event_id(headers: &HeaderMap) -> Option<u64> {
    headers.get("last-event-id")?.to_str().ok()?.parse().ok()
}

async fn session_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Response {
    let after = q.after.or_else(|| last_event_id(&headers)).unwrap_or(0);
    match event_stream(&app, &id, after, q.follow.unwrap_or(true)) {
        Ok(events) => {
            let sse = events.map(|e| {
                let data = serde_json::to_string(&e).expect("events serialize");
                Ok::<_, Infallible>(Event::default().id(e.seq.to_string()).event(e.body.kind()).data(data))
            });
            Sse::new(sse).keep_alive(KeepAlive::default()).into_response()
        }
        Err(r) => *r,
    }
}

async fn session_usage(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if !is_valid_session_id(&id) {
        return not_found(&id);
    }
    match app.store.load(&id) {
        Ok(events) => Json(usage_series(&events)).into_response(),
        Err(TelemetryError::UnknownSession(_)) if app.live(&id).is_some() => Json(json!([])).into_response(),
        Err(TelemetryError::UnknownSession(_)) => not_found(&id),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn session_ws(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    match event_stream(&app, &id, q.after.unwrap_or(0), q.follow.unwrap_or(true)) {
        Ok(events) => ws.on_upgrade(move |socket| pump(socket, events)),
        Err(r) => *r,
    }
}

/// Sends events until the stream ends or the client goes away. Incoming
/// frames are ignored apart from close.
async fn pump(mut socket: WebSocket, mut events: BoxStream<'static, SessionEvent>) {
    loop {
        tokio::select! {
            next = events.next() => match next {
                Some(e) => {
                    let text = serde_json::to_string(&e).expect("events serialize");
                    if socket.send(WsMessage::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                None => {
                    let _ = socket.send(WsMessage::Close(None)).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// State for `serve`: the configured scenario first, then whichever bundled
/// scenarios it does not already cover.
pub fn state_from_config(config: &crate::config::Config) -> anyhow::Result<AppState> {
    let opts = config.scenario_options()?;
    let primary = config.scenario_kind()?;
    let mut kinds = vec![(primary.clone(), BackendFactory::from_config(config, &primary)?)];
    for extra in [ScenarioKind::Booking, ScenarioKind::Troubleshooting] {
        if extra != primary {
            let cfg = crate::config::Config {
                script: None,
                ..config.clone()
            };
            kinds.push((extra.clone(), BackendFactory::from_config(&cfg, &extra)?));
        }
    }
    let store = Arc::new(convroutine::telemetry::JsonlStore::open(&config.sessions_dir)?);
    AppState::new(
        &kinds,
        &opts,
        config.default_model.as_deref(),
        store,
        Arc::new(convroutine::clock::SystemClock),
    )
}

pub async fn serve(config: crate::config::Config) -> anyhow::Result<()> {
    let state = Arc::new(state_from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.listen_addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("shutting down");
        })
        .await?;
    Ok(())
}
