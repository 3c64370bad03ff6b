//! HTTP API consumed by the web UI. Chat sessions live in memory only.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, OwnedSemaphorePermit, Semaphore};

use geosquad::engine::{Engine, ScriptMode};
use geosquad::events::RunEvent;
use geosquad::sandbox::map::MapState;
use geosquad::sandbox::SandboxSession;
use geosquad::types::{Domain, ExecutionTrace};

use crate::app::{chat_strategy, plan_chat};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

/// Append-only history plus the map the session has built so far.
pub struct ChatSession {
    pub id: String,
    pub history: Vec<ChatTurn>,
    pub map: MapState,
    pub last_trace: Option<String>,
    /// Taken by the active run; `None` means the session is busy.
    sandbox: Option<SandboxSession>,
}

impl ChatSession {
    pub fn busy(&self) -> bool {
        self.sandbox.is_none()
    }
}

#[derive(Default)]
struct RunState {
    events: Vec<RunEvent>,
    trace: Option<ExecutionTrace>,
    error: Option<String>,
    done: bool,
}

struct RunRecord {
    state: Mutex<RunState>,
    tick: watch::Sender<usize>,
}

impl RunRecord {
    fn new() -> Self {
        RunRecord { state: Mutex::new(RunState::default()), tick: watch::channel(0).0 }
    }

    fn push(&self, e: RunEvent) {
        let n = {
            let mut s = self.state.lock().expect("run lock");
            s.events.push(e);
            s.events.len()
        };
        self.tick.send_replace(n);
    }

    fn finish(&self, trace: Option<ExecutionTrace>, error: Option<String>) {
        {
            let mut s = self.state.lock().expect("run lock");
            s.trace = trace;
            s.error = error;
            s.done = true;
        }
        self.tick.send_modify(|n| *n += 1);
    }
}

struct Inner {
    engine: Engine,
    sessions: Mutex<HashMap<String, ChatSession>>,
    runs: Mutex<HashMap<String, Arc<RunRecord>>>,
    next_id: AtomicU64,
    /// Runs execute at most `parallelism` at a time; the rest queue.
    slots: Arc<Semaphore>,
    slot_count: u32,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(engine: Engine) -> Self {
        let slot_count = engine.config.parallelism.max(1) as u32;
        AppState(Arc::new(Inner {
            slots: Arc::new(Semaphore::new(slot_count as usize)),
            slot_count,
            engine,
            sessions: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }

    /// Holds every run slot until the guard drops. Accepted chats stay
    /// queued, and their sessions busy, meanwhile.
    pub async fn pause(&self) -> OwnedSemaphorePermit {
        self.0.slots.clone().acquire_many_owned(self.0.slot_count).await.expect("semaphore open")
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.0.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn run(&self, id: &str) -> Option<Arc<RunRecord>> {
        self.0.runs.lock().expect("runs lock").get(id).cloned()
    }
}

/// JSON error body `{"error": ...}` with an optional run id.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    run_id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), run_id: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(r) = self.run_id {
            body["run_id"] = json!(r);
        }
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{session_id}", get(get_session))
        .route("/api/chat", post(chat))
        .route("/api/events/{run_id}", get(events))
        .route("/api/map/{session_id}", get(map))
        .route("/api/traces/{run_id}", get(trace))
        .route("/api/agents", get(agents))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn create_session(State(s): State<AppState>) -> Json<serde_json::Value> {
    let id = s.fresh_id("s");
    let session = ChatSession {
        id: id.clone(),
        history: Vec::new(),
        map: MapState::default(),
        last_trace: None,
        sandbox: Some(SandboxSession::new(s.0.engine.sandbox.clone())),
    };
    s.0.sessions.lock().expect("sessions lock").insert(id.clone(), session);
    Json(json!({ "session_id": id }))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let sessions = s.0.sessions.lock().expect("sessions lock");
    let c = sessions.get(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))?;
    Ok(Json(json!({
        "session_id": c.id,
        "history": c.history,
        "busy": c.busy(),
        "last_trace": c.last_trace,
    })))
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub text: String,
}

async fn chat(
    State(s): State<AppState>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    if req.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "text must not be empty"));
    }
    let run_id = s.fresh_id("r");
    let sandbox = {
        let mut sessions = s.0.sessions.lock().expect("sessions lock");
        let c = sessions
            .get_mut(&req.session_id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{}'", req.session_id)))?;
        let sb = c
            .sandbox
            .take()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("session '{}' has a run in progress", c.id)))?;
        c.history.push(ChatTurn { role: "user".into(), text: req.text.clone(), run_id: Some(run_id.clone()) });
        sb
    };
    let record = Arc::new(RunRecord::new());
    s.0.runs.lock().expect("runs lock").insert(run_id.clone(), record.clone());
    let st = s.clone();
    let rid = run_id.clone();
    let slots = s.0.slots.clone();
    tokio::spawn(async move {
        let permit = slots.acquire_owned().await.expect("semaphore open");
        let _ = tokio::task::spawn_blocking(move || execute(st, record, rid, req, sandbox, permit)).await;
    });
    Ok(Json(json!({ "run_id": run_id })))
}

fn execute(
    st: AppState,
    record: Arc<RunRecord>,
    rid: String,
    req: ChatRequest,
    mut sandbox: SandboxSession,
    _permit: OwnedSemaphorePermit,
) {
    {
        let engine = &st.0.engine;
        let plan = plan_chat(&rid, &req.text);
        let strategy = chat_strategy(&engine.config);
        let emit = |e: &RunEvent| record.push(e.clone());
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
            engine.run_in(&plan.task, plan.steps.as_deref(), &strategy, ScriptMode::Faithful, &mut sandbox, &emit)
        }));
        let reply = match &outcome {
            Ok(t) => t.final_answer.clone(),
            Err(_) => "internal error".to_string(),
        };
        {
            let mut sessions = st.0.sessions.lock().expect("sessions lock");
            if let Some(c) = sessions.get_mut(&req.session_id) {
                c.map = sandbox.map().clone();
                c.sandbox = Some(sandbox);
                c.last_trace = Some(rid.clone());
                c.history.push(ChatTurn { role: "assistant".into(), text: reply, run_id: Some(rid.clone()) });
            }
        }
        match outcome {
            Ok(t) => record.finish(Some(t), None),
            Err(p) => {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                record.finish(None, Some(msg.unwrap_or_else(|| "run panicked".into())));
            }
        }
    }
}

/// Replays the run's events from the start, then follows it live until the
/// run is finished.
async fn events(
    State(s): State<AppState>,
    Path(run_id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let record = s.run(&run_id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run '{run_id}'")))?;
    let rx = record.tick.subscribe();
    let stream = stream::unfold((record, rx, 0usize), |(record, mut rx, idx)| async move {
        loop {
            rx.borrow_and_update();
            let next = {
                let st = record.state.lock().expect("run lock");
                match st.events.get(idx) {
                    Some(e) => Some(Some(e.clone())),
                    None if st.done => None,
                    None => Some(None),
                }
            };
            match next {
                Some(Some(e)) => {
                    let ev = Event::default().event(e.kind()).json_data(&e).expect("event serializes");
                    return Some((Ok(ev), (record, rx, idx + 1)));
                }
                None => return None,
                Some(None) => {
                    if rx.changed().await.is_err() {
                        return None;
                    }
                }
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn map(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<MapState>, ApiError> {
    let sessions = s.0.sessions.lock().expect("sessions lock");
    let c = sessions.get(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))?;
    Ok(Json(c.map.clone()))
}

async fn trace(State(s): State<AppState>, Path(run_id): Path<String>) -> Result<Json<ExecutionTrace>, ApiError> {
    let record = s.run(&run_id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("trace not found: '{run_id}'")))?;
    let st = record.state.lock().expect("run lock");
    match (&st.trace, &st.error) {
        (Some(t), _) => Ok(Json(t.clone())),
        (None, Some(e)) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.clone(),
            run_id: Some(run_id),
        }),
        (None, None) => Err(ApiError::new(StatusCode::NOT_FOUND, format!("run '{run_id}' is still in progress"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub agent: Domain,
    pub name: String,
    pub tools: usize,
    pub real_tools: usize,
    pub filler_tools: usize,
    pub schema_tokens: u64,
}

async fn agents(State(s): State<AppState>) -> Json<Vec<AgentInfo>> {
    let reg = &s.0.engine.registry;
    let roster = reg
        .domains()
        .into_iter()
        .map(|a| {
            let (real, filler) = reg.count(a);
            AgentInfo {
                agent: a,
                name: a.agent_name().to_string(),
                tools: real + filler,
                real_tools: real,
                filler_tools: filler,
                schema_tokens: reg.schema_tokens(Some(a)),
            }
        })
        .collect();
    Json(roster)
}
