use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmBackend, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub request: CompletionRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TranscriptEntry {
    fn new(seq: u64, request: &CompletionRequest, outcome: &Result<String, LlmError>) -> Self {
        Self {
            seq,
            request: request.clone(),
            response: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(ToString::to_string),
        }
    }
}

/// Append-only log of completion calls.
#[derive(Debug, Default)]
pub struct Transcript {
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries: Mutex::new(entries) }
    }

    fn push(&self, entry: TranscriptEntry) {
        self.entries.lock().expect("transcript lock").push(entry);
    }

    /// Appends buffered entries, renumbering them to continue the sequence.
    pub fn extend(&self, entries: impl IntoIterator<Item = TranscriptEntry>) {
        let mut log = self.entries.lock().expect("transcript lock");
        for mut entry in entries {
            entry.seq = log.len() as u64;
            log.push(entry);
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a backend and records every call as it returns.
pub struct Recording<B> {
    inner: B,
    issued: AtomicU64,
    log: Transcript,
}

impl<B: LlmBackend> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, issued: AtomicU64::new(0), log: Transcript::new() }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log.entries()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for Recording<B> {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let seq = self.issued.fetch_add(1, Ordering::SeqCst);
        let outcome = self.inner.complete(request);
        self.log.push(TranscriptEntry::new(seq, request, &outcome));
        outcome
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn export_state(&self) -> Option<serde_json::Value> {
        self.inner.export_state()
    }

    fn import_state(&self, state: &serde_json::Value) -> Result<(), LlmError> {
        self.inner.import_state(state)
    }
}

/// Per-worker recorder: calls go straight to the shared backend, but the
/// transcript entries stay local until the engine merges them in a fixed
/// agent order.
pub struct BufferedLlm<'a> {
    inner: &'a dyn LlmBackend,
    buffer: Mutex<Vec<TranscriptEntry>>,
}

impl<'a> BufferedLlm<'a> {
    pub fn new(inner: &'a dyn LlmBackend) -> Self {
        Self { inner, buffer: Mutex::new(Vec::new()) }
    }

    pub fn into_entries(self) -> Vec<TranscriptEntry> {
        self.buffer.into_inner().expect("buffer lock")
    }
}

impl LlmBackend for BufferedLlm<'_> {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let outcome = self.inner.complete(request);
        let mut buffer = self.buffer.lock().expect("buffer lock");
        let seq = buffer.len() as u64;
        buffer.push(TranscriptEntry::new(seq, request, &outcome));
        outcome
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}
