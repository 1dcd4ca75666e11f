//! Election simulation with language-model agents on a Mastodon-like platform.

pub mod agent;
pub mod engine;
pub mod llm;
pub mod measurement;
pub mod persona;
pub mod platform;
pub mod rng;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Llm(#[from] llm::LlmError),
    #[error(transparent)]
    Platform(#[from] platform::PlatformError),
    #[error(transparent)]
    Persona(#[from] persona::PersonaError),
    #[error(transparent)]
    Memory(#[from] agent::memory::MemoryError),
    #[error(transparent)]
    Agent(#[from] agent::AgentError),
    #[error(transparent)]
    Export(#[from] measurement::ExportError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl SimError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SimError::Io { context: context.into(), source }
    }
}
