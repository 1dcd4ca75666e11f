//! The HTTP completion backend against a scripted chat-completions server.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use mastosim::llm::{CompletionRequest, LlmBackend, LlmError, LlmParams, PromptKind, RemoteBackend};

#[derive(Default)]
struct Fake {
    /// Status codes to answer with, in order; 200 once exhausted.
    plan: VecDeque<u16>,
    seen: Vec<(Option<String>, Value)>,
}

type Shared = Arc<Mutex<Fake>>;

async fn complete(State(s): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let mut fake = s.lock().unwrap();
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).map(String::from);
    fake.seen.push((auth, body.clone()));
    let code = fake.plan.pop_front().unwrap_or(200);
    if code != 200 {
        return (StatusCode::from_u16(code).unwrap(), Json(json!({ "error": { "message": "scripted failure" } })));
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    let reply = format!("echo: {prompt}");
    (StatusCode::OK, Json(json!({ "choices": [{ "message": { "role": "assistant", "content": reply } }] })))
}

fn spawn(plan: &[u16]) -> (String, Shared) {
    let shared: Shared = Arc::new(Mutex::new(Fake { plan: plan.iter().copied().collect(), seen: Vec::new() }));
    let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(shared.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}/v1/chat/completions", rx.recv().unwrap()), shared)
}

fn backend(endpoint: String, max_retries: u32) -> RemoteBackend {
    let params = LlmParams {
        endpoint,
        model: "test-model".into(),
        temperature: 0.5,
        max_retries,
        initial_backoff_ms: 1,
        max_backoff_ms: 4,
        requests_per_minute: 6000,
        timeout_secs: 10,
        ..LlmParams::default()
    };
    RemoteBackend::new(params, "sk-test".into()).unwrap()
}

fn request(text: &str) -> CompletionRequest {
    CompletionRequest::new(PromptKind::VotePoll, "Alice Okafor", text, 200)
}

#[test]
fn transient_failures_are_retried_until_success() {
    let (url, fake) = spawn(&[503, 500]);
    let llm = backend(url, 5);
    assert_eq!(llm.complete(&request("who do you vote for?")).unwrap(), "echo: who do you vote for?");
    assert_eq!(llm.retries(), 2);
    let fake = fake.lock().unwrap();
    assert_eq!(fake.seen.len(), 3);
    let (auth, body) = &fake.seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.5);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn rate_limit_responses_count_as_transient() {
    let (url, fake) = spawn(&[429]);
    let llm = backend(url, 2);
    assert!(llm.complete(&request("hi")).is_ok());
    assert_eq!(llm.retries(), 1);
    assert_eq!(fake.lock().unwrap().seen.len(), 2);
}

#[test]
fn retries_are_bounded() {
    let (url, fake) = spawn(&[500, 502, 503, 504]);
    let llm = backend(url, 2);
    match llm.complete(&request("hi")) {
        Err(LlmError::RetriesExhausted { attempts, last_error }) => {
            assert_eq!(attempts, 3);
            assert!(last_error.contains("503"), "{last_error}");
        }
        other => panic!("expected exhausted retries, got {other:?}"),
    }
    assert_eq!(fake.lock().unwrap().seen.len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, fake) = spawn(&[401]);
    let llm = backend(url, 5);
    assert!(matches!(llm.complete(&request("hi")), Err(LlmError::Fatal(_))));
    assert_eq!(llm.retries(), 0);
    assert_eq!(fake.lock().unwrap().seen.len(), 1);
}

#[test]
fn replies_are_truncated_to_the_request_budget() {
    let (url, _) = spawn(&[]);
    let llm = backend(url, 0);
    let mut req = request("a long prompt that the server echoes back");
    req.max_chars = 8;
    assert_eq!(llm.complete(&req).unwrap(), "echo: a ");
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    let llm = backend("http://127.0.0.1:9/v1/chat/completions".into(), 1);
    assert!(matches!(llm.complete(&request("hi")), Err(LlmError::RetriesExhausted { attempts: 2, .. })));
}
