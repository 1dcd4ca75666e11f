use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::warn;
use serde_json::{json, Value};

use super::{CompletionRequest, LlmBackend, LlmError, LlmParams, RateLimiter};

/// Client for an OpenAI-style `chat/completions` endpoint.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    params: LlmParams,
    api_key: String,
    limiter: Mutex<RateLimiter>,
    retries: AtomicU64,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(String),
}

impl RemoteBackend {
    /// Reads the credential from the environment variable named in `params`.
    pub fn from_env(params: LlmParams) -> Result<Self, LlmError> {
        let key = std::env::var(&params.api_key_env).map_err(|_| {
            LlmError::Config(format!("environment variable {} is not set", params.api_key_env))
        })?;
        Self::new(params, key)
    }

    pub fn new(params: LlmParams, api_key: String) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(params.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let limiter = Mutex::new(RateLimiter::per_minute(params.requests_per_minute));
        Ok(Self { client, params, api_key, limiter, retries: AtomicU64::new(0) })
    }

    /// Total retried attempts since construction.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }

    fn wait_for_slot(&self) {
        loop {
            let wait = {
                let mut limiter = self.limiter.lock().expect("limiter lock");
                match limiter.try_acquire(Instant::now()) {
                    Ok(()) => return,
                    Err(wait) => wait,
                }
            };
            std::thread::sleep(wait);
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        let ms = self.params.initial_backoff_ms.saturating_mul(factor).min(self.params.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, request: &CompletionRequest) -> Attempt {
        let body = json!({
            "model": self.params.model,
            "temperature": self.params.temperature,
            "messages": [{ "role": "user", "content": request.prompt_text }],
        });
        let response = match self
            .client
            .post(&self.params.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Attempt::Fatal(format!("HTTP {status}: {text}"));
        }
        match response.json::<Value>() {
            Ok(v) => match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
                Some(content) => Attempt::Done(content.to_string()),
                None => Attempt::Fatal(format!("response without message content: {v}")),
            },
            Err(e) => Attempt::Transient(format!("undecodable response: {e}")),
        }
    }
}

impl LlmBackend for RemoteBackend {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            self.wait_for_slot();
            match self.attempt(request) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(msg) => return Err(LlmError::Fatal(msg)),
                Attempt::Transient(msg) if attempt < self.params.max_retries => {
                    let delay = self.backoff(attempt);
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    warn!(
                        "{} request for {} failed ({msg}); retry {attempt}/{} in {delay:?}",
                        request.prompt_kind, request.agent_name, self.params.max_retries
                    );
                    std::thread::sleep(delay);
                }
                Attempt::Transient(msg) => {
                    return Err(LlmError::RetriesExhausted { attempts: attempt + 1, last_error: msg })
                }
            }
        }
    }

    fn identity(&self) -> String {
        format!("remote:{}@{}", self.params.model, self.params.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let params = LlmParams { initial_backoff_ms: 100, max_backoff_ms: 350, ..LlmParams::default() };
        let b = RemoteBackend::new(params, "k".into()).unwrap();
        assert_eq!(b.backoff(0), Duration::from_millis(100));
        assert_eq!(b.backoff(1), Duration::from_millis(200));
        assert_eq!(b.backoff(2), Duration::from_millis(350));
        assert_eq!(b.backoff(70), Duration::from_millis(350));
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        let params = LlmParams { api_key_env: "MASTOSIM_TEST_SURELY_UNSET_VAR".into(), ..LlmParams::default() };
        assert!(matches!(RemoteBackend::from_env(params), Err(LlmError::Config(_))));
    }
}
