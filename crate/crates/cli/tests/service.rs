use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use geosquad::engine::{Engine, EngineConfig};
use geosquad::events::RunEvent;
use geosquad::sandbox::map::MapState;
use geosquad::types::{Domain, ExecutionTrace, Terminal};
use geosquad_cli::app::engine_with_memories;
use geosquad_cli::service::{router, AgentInfo, AppState};

const CROP: &str = "From NDVI, recommend crop rotation areas in Brisbane";

fn state() -> AppState {
    AppState::new(engine_with_memories(EngineConfig::default()).unwrap())
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn new_session(app: &Router) -> String {
    let (st, body) = send(app, "POST", "/api/sessions", None).await;
    assert_eq!(st, StatusCode::OK);
    serde_json::from_str::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_string()
}

async fn start_chat(app: &Router, session: &str, text: &str) -> (StatusCode, Value) {
    let (st, body) = send(app, "POST", "/api/chat", Some(json!({ "session_id": session, "text": text }))).await;
    (st, serde_json::from_str(&body).unwrap())
}

/// Parses an SSE body into (event name, payload) pairs.
fn sse_events(text: &str) -> Vec<(String, RunEvent)> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let name = block.lines().find_map(|l| l.strip_prefix("event: "));
        let data = block.lines().find_map(|l| l.strip_prefix("data: "));
        if let (Some(n), Some(d)) = (name, data) {
            out.push((n.to_string(), serde_json::from_str(d).unwrap()));
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn chat_round_trip_streams_events_and_builds_map() {
    let app = router(state());
    let sid = new_session(&app).await;
    let (st, v) = start_chat(&app, &sid, CROP).await;
    assert_eq!(st, StatusCode::OK);
    let run_id = v["run_id"].as_str().unwrap().to_string();

    // The stream ends once the run is finished.
    let (st, body) = send(&app, "GET", &format!("/api/events/{run_id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let events = sse_events(&body);
    assert!(matches!(events.first(), Some((n, RunEvent::Schedule { .. })) if n == "schedule"));
    assert!(matches!(events.last(), Some((n, RunEvent::Final { terminal: Terminal::Completed, .. })) if n == "final"));
    for (name, e) in &events {
        assert_eq!(name, e.kind());
    }
    let starts: Vec<Domain> = events
        .iter()
        .filter_map(|(_, e)| match e {
            RunEvent::AgentStart { agent, .. } => Some(*agent),
            _ => None,
        })
        .collect();
    assert_eq!(starts, vec![Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map]);

    let (st, body) = send(&app, "GET", &format!("/api/traces/{run_id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let trace: ExecutionTrace = serde_json::from_str(&body).unwrap();
    assert_eq!(trace.task_id, run_id);
    assert_eq!(trace.terminal, Terminal::Completed);
    assert!(trace.token_usage.total_tokens > 0);
    assert!(trace.token_usage.is_consistent());

    let (st, body) = send(&app, "GET", &format!("/api/map/{sid}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let raw: Value = serde_json::from_str(&body).unwrap();
    for key in ["product", "region", "date", "style"] {
        assert!(raw["layers"][0].get(key).is_some(), "layer field {key}");
    }
    let map: MapState = serde_json::from_value(raw).unwrap();
    assert!(!map.layers.is_empty());
    assert!(map.highlighted().count() >= 1);

    let (_, body) = send(&app, "GET", &format!("/api/sessions/{sid}"), None).await;
    let s: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(s["history"].as_array().unwrap().len(), 2);
    assert_eq!(s["busy"], false);
    assert_eq!(s["last_trace"], run_id.as_str());
}

#[tokio::test(flavor = "multi_thread")]
async fn second_chat_on_busy_session_is_409() {
    let state = state();
    let app = router(state.clone());
    let sid = new_session(&app).await;
    let other = new_session(&app).await;
    let pause = state.pause().await;
    let (st, v) = start_chat(&app, &sid, CROP).await;
    assert_eq!(st, StatusCode::OK);
    let (st, err) = start_chat(&app, &sid, CROP).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("in progress"));
    // Other sessions are unaffected.
    let (st, _) = start_chat(&app, &other, CROP).await;
    assert_eq!(st, StatusCode::OK);
    drop(pause);
    let run_id = v["run_id"].as_str().unwrap();
    let (_, body) = send(&app, "GET", &format!("/api/events/{run_id}"), None).await;
    assert!(body.contains("event: final"));
    let (st, _) = start_chat(&app, &sid, "Plot NDVI in Ipswich for 2024").await;
    assert_eq!(st, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn error_mapping() {
    let app = router(state());
    let sid = new_session(&app).await;
    let (st, _) = send(&app, "GET", "/api/map/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, body) = send(&app, "GET", "/api/traces/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(body.contains("trace not found"));
    let (st, _) = send(&app, "GET", "/api/events/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = start_chat(&app, "nope", CROP).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = start_chat(&app, &sid, "   ").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = send(&app, "POST", "/api/chat", Some(json!({ "session": sid }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let req = Request::builder()
        .method("POST")
        .uri("/api/chat")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_map_before_any_run() {
    let app = router(state());
    let sid = new_session(&app).await;
    let (st, body) = send(&app, "GET", &format!("/api/map/{sid}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({ "layers": [], "annotations": [] }));
}

#[tokio::test(flavor = "multi_thread")]
async fn agents_roster_counts_tools() {
    let engine = Engine::new(EngineConfig::default()).unwrap();
    let app = router(AppState::new(engine));
    let (st, body) = send(&app, "GET", "/api/agents", None).await;
    assert_eq!(st, StatusCode::OK);
    let roster: Vec<AgentInfo> = serde_json::from_str(&body).unwrap();
    assert_eq!(roster.len(), 8);
    assert_eq!(roster.iter().map(|a| a.tools).sum::<usize>(), 521);
    assert!(roster.iter().all(|a| a.real_tools > 0 && a.tools == a.real_tools + a.filler_tools));
}
