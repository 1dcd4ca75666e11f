//! Completion interface shared by every prompt in the simulation, with a
//! scripted rule-driven backend for reproducible runs and an HTTP backend
//! for chat-completion services.

mod ratelimit;
mod remote;
mod scripted;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ratelimit::RateLimiter;
pub use remote::RemoteBackend;
pub use scripted::{ScriptedBackend, ScriptedRule, ScriptedRules};
pub use transcript::{BufferedLlm, Recording, Transcript, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Anecdote,
    Backstory,
    Opinion,
    CurrentOpinion,
    PerceptionPlan,
    MaliciousPlan,
    AppAction,
    TootContent,
    VotePoll,
    FavorabilityPoll,
}

impl PromptKind {
    pub const ALL: [PromptKind; 10] = [
        PromptKind::Anecdote,
        PromptKind::Backstory,
        PromptKind::Opinion,
        PromptKind::CurrentOpinion,
        PromptKind::PerceptionPlan,
        PromptKind::MaliciousPlan,
        PromptKind::AppAction,
        PromptKind::TootContent,
        PromptKind::VotePoll,
        PromptKind::FavorabilityPoll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Anecdote => "anecdote",
            PromptKind::Backstory => "backstory",
            PromptKind::Opinion => "opinion",
            PromptKind::CurrentOpinion => "current_opinion",
            PromptKind::PerceptionPlan => "perception_plan",
            PromptKind::MaliciousPlan => "malicious_plan",
            PromptKind::AppAction => "app_action",
            PromptKind::TootContent => "toot_content",
            PromptKind::VotePoll => "vote_poll",
            PromptKind::FavorabilityPoll => "favorability_poll",
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_kind: PromptKind,
    pub agent_name: String,
    pub prompt_text: String,
    pub max_chars: usize,
}

impl CompletionRequest {
    pub fn new(
        prompt_kind: PromptKind,
        agent_name: impl Into<String>,
        prompt_text: impl Into<String>,
        max_chars: usize,
    ) -> Self {
        Self {
            prompt_kind,
            agent_name: agent_name.into(),
            prompt_text: prompt_text.into(),
            max_chars,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("empty prompt for {kind} request from {agent}")]
    EmptyPrompt { kind: PromptKind, agent: String },
    #[error("no scripted rule matches {kind} request from {agent}")]
    NoMatchingRule { kind: PromptKind, agent: String },
    #[error("invalid scripted rules: {0}")]
    InvalidRules(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("non-retryable backend error: {0}")]
    Fatal(String),
    #[error("backend state: {0}")]
    State(String),
}

/// A completion service.
///
/// Implementors provide [`generate`](LlmBackend::generate); callers use
/// [`complete`](LlmBackend::complete), which validates the request and
/// truncates the reply to `max_chars`.
pub trait LlmBackend: Send + Sync {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError>;

    /// Stable description recorded in run manifests.
    fn identity(&self) -> String;

    /// Mutable backend state that must survive a checkpoint.
    fn export_state(&self) -> Option<serde_json::Value> {
        None
    }

    fn import_state(&self, _state: &serde_json::Value) -> Result<(), LlmError> {
        Ok(())
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if request.prompt_text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt {
                kind: request.prompt_kind,
                agent: request.agent_name.clone(),
            });
        }
        let text = self.generate(request)?;
        Ok(truncate_chars(&text, request.max_chars))
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).generate(request)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn export_state(&self) -> Option<serde_json::Value> {
        (**self).export_state()
    }
    fn import_state(&self, state: &serde_json::Value) -> Result<(), LlmError> {
        (**self).import_state(state)
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).generate(request)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn export_state(&self) -> Option<serde_json::Value> {
        (**self).export_state()
    }
    fn import_state(&self, state: &serde_json::Value) -> Result<(), LlmError> {
        (**self).import_state(state)
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Cuts `text` to at most `max_chars` Unicode scalar values.
pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => text[..idx].to_string(),
        None => text.to_string(),
    }
}

/// Settings for the HTTP chat-completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmParams {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub requests_per_minute: u32,
    pub timeout_secs: u64,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 1.0,
            api_key_env: "MASTOSIM_LLM_API_KEY".into(),
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            requests_per_minute: 500,
            timeout_secs: 120,
        }
    }
}
