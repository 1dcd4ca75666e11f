//! The REST client against a small Mastodon-shaped HTTP server whose state
//! lives in an emulator.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use chrono::{Duration, NaiveDate};
use serde::Deserialize;
use serde_json::{json, Value};

use mastosim::engine::{run_simulation, RunOptions};
use mastosim::llm::{PromptKind, ScriptedBackend, ScriptedRule, ScriptedRules};
use mastosim::platform::contract::run_contract_suite;
use mastosim::platform::{AccountId, Emulator, MastodonClient, Platform, PlatformError, Toot, TootId};
use mastosim::scenario::{builtin_storhampton_scenario, ExperimentVariant};

struct Server {
    emu: Emulator,
    tokens: HashMap<String, AccountId>,
    tick: i64,
}

type Shared = Arc<Mutex<Server>>;

impl Server {
    fn new(blank: usize) -> Self {
        let mut emu = Emulator::new();
        let t0 = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        emu.set_clock(0, t0);
        let tokens = (1..=blank)
            .map(|i| {
                let id = emu.provision_account(&format!("blank{i}"), "", "").unwrap();
                (format!("token-{i}"), id)
            })
            .collect();
        Self { emu, tokens, tick: 0 }
    }

    /// Server time moves one second per request.
    fn tick(&mut self) {
        self.tick += 1;
        let t = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        self.emu.set_clock(0, t + Duration::seconds(self.tick));
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let code = match e {
            PlatformError::UnknownAccount(_) | PlatformError::UnknownToot(_) => StatusCode::NOT_FOUND,
            PlatformError::Blocked { .. } => StatusCode::FORBIDDEN,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(code, e.to_string())
    }
}

fn caller(server: &Server, headers: &HeaderMap) -> Result<AccountId, ApiError> {
    headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .and_then(|t| server.tokens.get(t))
        .cloned()
        .ok_or(ApiError(StatusCode::UNAUTHORIZED, "bad token".into()))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;").replace('\'', "&#39;")
}

fn account_json(server: &Server, id: &AccountId) -> Value {
    let account = server.emu.state().account(id).unwrap();
    json!({
        "id": id.0,
        "username": account.username,
        "display_name": account.display_name,
        "note": format!("<p>{}</p>", escape(&account.bio)),
    })
}

fn status_json(server: &Server, toot: &Toot) -> Value {
    json!({
        "id": toot.id.0,
        "created_at": format!("{}Z", toot.created_at.format("%Y-%m-%dT%H:%M:%S%.3f")),
        "account": { "id": toot.author.0 },
        "content": if toot.text.is_empty() { String::new() } else { format!("<p>{}</p>", escape(&toot.text)) },
        "in_reply_to_id": toot.in_reply_to.as_ref().map(|t| t.0.clone()),
        "mentions": toot.mentions.iter().map(|m| json!({ "id": m.0 })).collect::<Vec<_>>(),
        "reblog": toot.boost_of.as_ref().map(|b| status_json(server, server.emu.state().toot(b).unwrap())),
    })
}

async fn verify_credentials(State(s): State<Shared>, headers: HeaderMap) -> Result<Json<Value>, ApiError> {
    let server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    Ok(Json(account_json(&server, &me)))
}

#[derive(Deserialize)]
struct Credentials {
    display_name: Option<String>,
    note: Option<String>,
}

async fn update_credentials(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(body): Json<Credentials>,
) -> Result<Json<Value>, ApiError> {
    let mut server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    server.tick();
    let account = server.emu.state().account(&me).unwrap().clone();
    let display = body.display_name.unwrap_or(account.display_name);
    let note = body.note.unwrap_or(account.bio);
    server.emu.provision_account(&account.username, &display, &note)?;
    Ok(Json(account_json(&server, &me)))
}

#[derive(Deserialize)]
struct NewStatus {
    status: String,
    in_reply_to_id: Option<String>,
}

async fn post_status(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(body): Json<NewStatus>,
) -> Result<Json<Value>, ApiError> {
    let mut server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    server.tick();
    let toot = match body.in_reply_to_id {
        Some(parent) => server.emu.reply(&me, &TootId(parent), &body.status)?,
        None => server.emu.post_toot(&me, &body.status)?,
    };
    Ok(Json(status_json(&server, &toot)))
}

async fn status_action(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path((id, action)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let mut server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    server.tick();
    let id = TootId(id);
    let toot = match action.as_str() {
        "reblog" => server.emu.boost(&me, &id)?,
        "favourite" => {
            server.emu.favorite(&me, &id)?;
            server.emu.get_toot(&id)?
        }
        _ => return Err(ApiError(StatusCode::NOT_FOUND, action)),
    };
    Ok(Json(status_json(&server, &toot)))
}

async fn get_status(State(s): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let server = s.lock().unwrap();
    caller(&server, &headers)?;
    let toot = server.emu.get_toot(&TootId(id))?;
    Ok(Json(status_json(&server, &toot)))
}

async fn account_action(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path((id, action)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let mut server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    server.tick();
    let target = AccountId(id);
    match action.as_str() {
        "follow" => server.emu.follow(&me, &target)?,
        "unfollow" => server.emu.unfollow(&me, &target)?,
        "block" => server.emu.block(&me, &target)?,
        "unblock" => server.emu.unblock(&me, &target)?,
        _ => return Err(ApiError(StatusCode::NOT_FOUND, action)),
    }
    Ok(Json(json!({ "id": target.0 })))
}

#[derive(Deserialize)]
struct Limit {
    limit: Option<usize>,
}

async fn home(State(s): State<Shared>, headers: HeaderMap, Query(q): Query<Limit>) -> Result<Json<Value>, ApiError> {
    let server = s.lock().unwrap();
    let me = caller(&server, &headers)?;
    let toots = server.emu.home_timeline(&me, q.limit.unwrap_or(20).min(40))?;
    Ok(Json(Value::Array(toots.iter().map(|t| status_json(&server, t)).collect())))
}

/// Starts a server on its own runtime thread; returns its base URL, the
/// blank-account tokens and a handle on its state.
fn spawn(blank: usize) -> (String, Vec<String>, Shared) {
    let shared: Shared = Arc::new(Mutex::new(Server::new(blank)));
    let app = Router::new()
        .route("/api/v1/accounts/verify_credentials", get(verify_credentials))
        .route("/api/v1/accounts/update_credentials", patch(update_credentials))
        .route("/api/v1/accounts/{id}/{action}", post(account_action))
        .route("/api/v1/statuses", post(post_status))
        .route("/api/v1/statuses/{id}", get(get_status))
        .route("/api/v1/statuses/{id}/{action}", post(status_action))
        .route("/api/v1/timelines/home", get(home))
        .with_state(shared.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    let tokens = (1..=blank).map(|i| format!("token-{i}")).collect();
    (format!("http://{addr}"), tokens, shared)
}

#[test]
fn rest_client_passes_the_platform_contract() {
    let results = run_contract_suite(|| {
        let (url, tokens, _) = spawn(3);
        MastodonClient::new(url, tokens).unwrap()
    });
    for (name, result) in &results {
        assert!(result.is_ok(), "{name}: {result:?}");
    }
}

#[test]
fn running_out_of_blank_accounts_is_reported() {
    let (url, tokens, _) = spawn(1);
    let mut client = MastodonClient::new(url, tokens).unwrap();
    client.provision_account("alice", "Alice", "a").unwrap();
    assert!(matches!(client.provision_account("bob", "Bob", "b"), Err(PlatformError::NoBlankAccount(_))));
}

#[test]
fn server_errors_surface_as_remote_errors() {
    let (url, _, _) = spawn(1);
    let mut client = MastodonClient::new(url, vec!["not-a-token".into()]).unwrap();
    match client.provision_account("alice", "Alice", "a") {
        Err(PlatformError::Remote(msg)) => assert!(msg.contains("401"), "{msg}"),
        other => panic!("expected a remote error, got {other:?}"),
    }
}

fn rules() -> ScriptedRules {
    let rules = PromptKind::ALL
        .iter()
        .map(|k| {
            let answers: &[&str] = match k {
                PromptKind::AppAction => &["post: Morning, Storhampton!", "favorite: 1\nboost: 2", "follow: @blank3"],
                PromptKind::VotePoll => &["Bradley"],
                PromptKind::FavorabilityPoll => &["6"],
                _ => &["{agent} has thoughts."],
            };
            ScriptedRule::fallback(*k, answers)
        })
        .collect();
    ScriptedRules { rules }
}

#[test]
fn simulation_runs_against_the_server_and_mirrors_its_state() {
    let mut cfg = builtin_storhampton_scenario(ExperimentVariant::Control, 5);
    cfg.episodes_per_day = 4;
    cfg.scheduler.base_rate_default = 2;
    let (url, tokens, shared) = spawn(5);
    let mut client = MastodonClient::new(url.clone(), tokens).unwrap();
    let llm = ScriptedBackend::new(rules()).unwrap();
    let art = run_simulation(&cfg, &llm, &mut client, &RunOptions::default()).unwrap();

    assert!(art.is_complete());
    assert_eq!(art.platform_identity, format!("mastodon:{url}"));
    let server = shared.lock().unwrap();
    let remote = server.emu.state();
    let mirror = client.state();
    assert_eq!(mirror.follow_edges(), remote.follow_edges());
    let texts = |s: &mastosim::platform::PlatformState| -> Vec<(String, String, Option<String>)> {
        s.toots().iter().map(|t| (t.id.0.clone(), t.text.clone(), t.boost_of.as_ref().map(|b| b.0.clone()))).collect()
    };
    assert_eq!(texts(mirror), texts(remote));
    assert!(mirror.toots().len() >= cfg.agents.len(), "introductions and posts reached the server");
    for account in mirror.accounts() {
        let on_server = remote.account(&account.id).unwrap();
        assert_eq!(on_server.display_name, account.display_name);
        assert_eq!(on_server.bio, account.bio);
    }
}
