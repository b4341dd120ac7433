use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use convroutine::backend::{BackendError, ChatBackend};
use convroutine::bundled;
use convroutine::clock::FixedClock;
use convroutine::replay::ReplayInputs;
use convroutine::scenario::{ScenarioKind, ScenarioOptions};
use convroutine::telemetry::JsonlStore;
use convroutine::types::Message;
use convroutine::wire::{ChatRequest, ChatResponse, FinishReason, UsageRecord};
use convroutine_service::runtime::{script_for, BackendFactory};
use convroutine_service::server::{router, AppState};
use futures_util::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn booking_opts() -> ScenarioOptions {
    let inputs = ReplayInputs::parse(bundled::BOOKING_INPUTS).unwrap();
    inputs.apply(ScenarioOptions::default()).unwrap()
}

fn scripted(kind: ScenarioKind) -> (ScenarioKind, BackendFactory) {
    let steps = script_for(None, &kind).unwrap();
    (kind, BackendFactory::Scripted(Arc::new(steps)))
}

fn state(dir: &std::path::Path, kinds: &[(ScenarioKind, BackendFactory)]) -> Arc<AppState> {
    let store = Arc::new(JsonlStore::open(dir).unwrap());
    let clock = Arc::new(FixedClock::parse("2024-12-18T18:40:00+01:00").unwrap());
    Arc::new(AppState::new(kinds, &booking_opts(), None, store, clock).unwrap())
}

fn default_state(dir: &std::path::Path) -> Arc<AppState> {
    state(
        dir,
        &[scripted(ScenarioKind::Booking), scripted(ScenarioKind::Troubleshooting)],
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, scenario: &str) -> String {
    let (s, v) = call_json(app, "POST", "/sessions", Some(json!({ "scenario": scenario }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_session_and_first_turn() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(default_state(dir.path()));
    let (s, v) = call_json(&app, "POST", "/sessions", Some(json!({"scenario": "booking"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["active_agent"], "Train Booking Agent");
    let id = v["session_id"].as_str().unwrap();

    let (s, v) = call_json(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "vorrei un treno per Roma domani mattina"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v["final_text"]
        .as_str()
        .unwrap()
        .contains("Da quale stazione partirai?"));
    assert_eq!(v["status"], "open");
}

#[tokio::test]
async fn full_booking_over_http_then_events_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(default_state(dir.path()));
    let id = new_session(&app, "booking").await;
    let inputs = ReplayInputs::parse(bundled::BOOKING_INPUTS).unwrap();
    let mut booked = 0;
    for text in &inputs.messages {
        let (s, v) = call_json(
            &app,
            "POST",
            &format!("/sessions/{id}/messages"),
            Some(json!({"text": text})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        for m in v["messages_added"].as_array().unwrap() {
            for c in m["tool_calls"].as_array().into_iter().flatten() {
                if c["name"] == "book_train_ticket" {
                    booked += 1;
                }
            }
        }
    }
    assert_eq!(booked, 1);

    let (s, usage) = call_json(&app, "GET", &format!("/sessions/{id}/usage"), None).await;
    assert_eq!(s, StatusCode::OK);
    let usage = usage.as_array().unwrap();
    assert_eq!(usage.len(), 14);
    assert_eq!(usage[0]["prompt_tokens"], 2013);
    assert_eq!(usage[13]["prompt_tokens"], 3644);

    let (s, body) = call(&app, "GET", &format!("/sessions/{id}/events?follow=false"), None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    let ids: Vec<u64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("id: "))
        .map(|n| n.parse().unwrap())
        .collect();
    assert!(!ids.is_empty());
    assert_eq!(ids, (1..=ids.len() as u64).collect::<Vec<_>>());
    assert_eq!(text.matches("event: tool_call").count(), 6);

    // Backfill from a given seq only.
    let (_, body) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/events?follow=false&after=5"),
        None,
    )
    .await;
    let first = String::from_utf8(body)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("id: ").map(str::to_string));
    assert_eq!(first.as_deref(), Some("6"));

    // A fresh process over the same directory still serves the trace.
    let restarted = router(default_state(dir.path()));
    let (s, again) = call_json(&restarted, "GET", &format!("/sessions/{id}/usage"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again.as_array().unwrap().len(), 14);
    let (s, _) = call(&restarted, "GET", &format!("/sessions/{id}/events?follow=false"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(
        &restarted,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "ciao"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn troubleshooting_session_completes() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(default_state(dir.path()));
    let id = new_session(&app, "troubleshooting").await;
    let inputs = ReplayInputs::parse(bundled::TROUBLESHOOTING_INPUTS).unwrap();
    let mut last = Value::Null;
    for text in &inputs.messages {
        let (s, v) = call_json(
            &app,
            "POST",
            &format!("/sessions/{id}/messages"),
            Some(json!({"text": text})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        last = v;
    }
    assert_eq!(last["status"], "completed");
    assert_eq!(last["active_agent"], "Troubleshooting Report Agent");
    let (s, v) = call_json(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "altro?"})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    let (_, body) = call(&app, "GET", &format!("/sessions/{id}/events?follow=false"), None).await;
    assert!(String::from_utf8(body).unwrap().contains("event: session_end"));
}

#[tokio::test]
async fn errors_and_agents() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(default_state(dir.path()));
    let (s, _) = call_json(&app, "POST", "/sessions", Some(json!({"scenario": "weather"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call_json(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["scenario"], "booking");
    let (s, _) = call(&app, "GET", "/sessions/nope/usage", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/sessions/..%2Fetc/events", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions/nope/messages", Some(json!({"text": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let id = v["session_id"].as_str().unwrap();
    let (s, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "  "})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, agents) = call_json(&app, "GET", "/agents", None).await;
    assert_eq!(s, StatusCode::OK);
    let names: Vec<&str> = agents
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec![
            "Train Booking Agent",
            "Troubleshooting Assistant Agent",
            "Troubleshooting Report Agent"
        ]
    );
}

/// Blocks each call until the test releases it.
struct GateBackend {
    release: Mutex<mpsc::Receiver<()>>,
}

impl ChatBackend for GateBackend {
    fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.release
            .lock()
            .unwrap()
            .recv_timeout(Duration::from_secs(10))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(ChatResponse {
            message: Message::assistant("ok"),
            finish_reason: FinishReason::Stop,
            usage: UsageRecord::new(10, 1),
        })
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_message_while_busy_gets_409() {
    let dir = tempfile::tempdir().unwrap();
    let (tx, rx) = mpsc::channel();
    let gate: Arc<dyn ChatBackend> = Arc::new(GateBackend {
        release: Mutex::new(rx),
    });
    let app = router(state(
        dir.path(),
        &[(ScenarioKind::Booking, BackendFactory::Shared(gate))],
    ));
    let id = new_session(&app, "booking").await;

    let uri = format!("/sessions/{id}/messages");
    let first = {
        let app = app.clone();
        let uri = uri.clone();
        tokio::spawn(async move { call_json(&app, "POST", &uri, Some(json!({"text": "primo"}))).await })
    };
    // Wait until the first turn holds the session.
    for _ in 0..200 {
        let (_, info) = call_json(&app, "GET", &format!("/sessions/{id}"), None).await;
        if info["busy"] == true {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({"text": "secondo"}))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");

    tx.send(()).unwrap();
    let (s, v) = first.await.unwrap();
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["final_text"], "ok");

    // Free again once the turn is over.
    tx.send(()).unwrap();
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({"text": "terzo"}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_streams_backlog_and_live_events() {
    let dir = tempfile::tempdir().unwrap();
    let st = default_state(dir.path());
    let app = router(st.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(st)).await.unwrap() });

    let id = new_session(&app, "booking").await;
    let inputs = ReplayInputs::parse(bundled::BOOKING_INPUTS).unwrap();
    let uri = format!("/sessions/{id}/messages");
    call_json(&app, "POST", &uri, Some(json!({"text": inputs.messages[0]}))).await;

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/ws"))
        .await
        .unwrap();
    for text in &inputs.messages[1..4] {
        call_json(&app, "POST", &uri, Some(json!({"text": text}))).await;
    }

    let mut kinds = Vec::new();
    let mut seqs = Vec::new();
    // Every turn above has finished, so the stream goes quiet once drained.
    while let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(1), ws.next()).await {
        let text = msg.unwrap().into_text().unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        seqs.push(v["seq"].as_u64().unwrap());
        kinds.push(v["kind"].as_str().unwrap().to_string());
    }
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(kinds.iter().filter(|k| *k == "user_msg").count(), 4);
    // The station search shows up in the live part.
    assert!(kinds.contains(&"tool_call".to_string()), "{kinds:?}");
    assert!(kinds.contains(&"tool_result".to_string()), "{kinds:?}");
}
