use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use convroutine::backend::{BackendError, ChatBackend};
use convroutine::wire::{decode_request, FinishReason};
use convroutine_service::live::LiveBackend;

const GOLDEN_REQUEST: &str = include_str!("../../core/tests/fixtures/wire/booking_request.json");
const STOP_RESPONSE: &str = include_str!("../../core/tests/fixtures/wire/stop_response.json");

#[derive(Default)]
struct Fake {
    /// Canned replies, served in order; the last one repeats.
    replies: Mutex<VecDeque<(u16, String)>>,
    seen: Mutex<Vec<(Option<String>, Bytes)>>,
}

async fn completions(State(fake): State<Arc<Fake>>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    fake.seen.lock().unwrap().push((auth, body));
    let mut q = fake.replies.lock().unwrap();
    let (status, text) = if q.len() > 1 {
        q.pop_front().unwrap()
    } else {
        q[0].clone()
    };
    (StatusCode::from_u16(status).unwrap(), text)
}

/// Serves the fake on its own runtime thread; the backend under test blocks.
fn start(replies: &[(u16, &str)]) -> (SocketAddr, Arc<Fake>) {
    let fake = Arc::new(Fake::default());
    fake.replies
        .lock()
        .unwrap()
        .extend(replies.iter().map(|(s, b)| (*s, b.to_string())));
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(fake.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), fake)
}

fn backend(addr: SocketAddr) -> LiveBackend {
    LiveBackend::new(&format!("http://{addr}/v1"), "sk-test".into(), Duration::from_secs(5))
        .unwrap()
        .with_retries(2, Duration::from_millis(10))
}

#[test]
fn sends_the_wire_request_and_decodes_the_reply() {
    let (addr, fake) = start(&[(200, STOP_RESPONSE)]);
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let resp = backend(addr).complete(&req).unwrap();
    assert_eq!(resp.finish_reason, FinishReason::Stop);
    assert_eq!(resp.message.content, "Da quale stazione partirai?");
    assert_eq!(resp.usage.total_tokens, 2093);

    let seen = fake.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].0.as_deref(), Some("Bearer sk-test"));
    assert_eq!(std::str::from_utf8(&seen[0].1).unwrap(), GOLDEN_REQUEST);
}

#[test]
fn retries_server_errors() {
    let (addr, fake) = start(&[(500, "boom"), (503, "busy"), (200, STOP_RESPONSE)]);
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let resp = backend(addr).complete(&req).unwrap();
    assert_eq!(resp.usage.prompt_tokens, 2075);
    assert_eq!(fake.seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (addr, fake) = start(&[(429, "slow down")]);
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let err = backend(addr).complete(&req).unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 429, .. }), "{err}");
    assert_eq!(fake.seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, fake) = start(&[(401, r#"{"error":"bad key"}"#)]);
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let err = backend(addr).complete(&req).unwrap_err();
    match err {
        BackendError::Http { status, body } => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(fake.seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_a_decode_error() {
    let (addr, fake) = start(&[(200, r#"{"choices":[]}"#)]);
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let err = backend(addr).complete(&req).unwrap_err();
    assert!(matches!(err, BackendError::Decode(_)), "{err}");
    assert_eq!(fake.seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // Bind and drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let req = decode_request(GOLDEN_REQUEST.as_bytes()).unwrap();
    let err = backend(port).complete(&req).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
}
