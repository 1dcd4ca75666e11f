//! Per-agent state and the reasoning components that run each time an agent
//! opens the app.

pub mod memory;
pub mod prompts;
mod session;

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, LlmBackend, LlmError, PromptKind};
use crate::persona::TraitSet;
use crate::platform::AccountId;
use crate::scenario::{AgentRole, AgentSpec};
use memory::{MemoryError, MemoryRecord, MemoryStore, MemoryTag, RetrievalWeights};

pub use session::{
    apply_actions, decide_session, parse_actions, render_feed, ActionKind, ActionOutcome,
    AppAction, ParseError, SessionContext, SessionPlan,
};

pub const OPINION_CHARS: usize = 1000;
pub const PLAN_CHARS: usize = 1500;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("component `{component}` does not apply to {agent} ({role:?})")]
    Role { agent: String, component: &'static str, role: AgentRole },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedOpinion {
    /// Memory count when the opinion was formed; any new memory invalidates it.
    pub memory_count: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// With placeholders resolved.
    pub spec: AgentSpec,
    pub traits: TraitSet,
    pub backstory: String,
    /// Persona block placed at the top of every prompt.
    pub persona: String,
    pub account: AccountId,
    pub memories: MemoryStore,
    #[serde(default)]
    pub opinions: BTreeMap<String, CachedOpinion>,
}

impl AgentState {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn role(&self) -> AgentRole {
        self.spec.role
    }

    pub fn remember(&mut self, at: NaiveDateTime, text: impl Into<String>, tag: MemoryTag) -> Result<(), MemoryError> {
        self.memories.push(MemoryRecord::new(at, text, tag))
    }

    fn ask(&self, kind: PromptKind, prompt: String, max_chars: usize, llm: &dyn LlmBackend) -> Result<String, LlmError> {
        llm.complete(&CompletionRequest::new(kind, self.name(), prompt, max_chars))
    }

    fn recall(&self, query: &str, k: usize, weights: RetrievalWeights) -> String {
        prompts::bullets(self.memories.retrieve(query, k, weights).into_iter().map(|m| m.text.as_str()))
    }
}

/// Long-run opinion of `candidate` from retrieved memories. Reused until the
/// agent's memory changes.
pub fn opinion_on_candidate(
    agent: &mut AgentState,
    candidate: &str,
    proposal: &str,
    k: usize,
    weights: RetrievalWeights,
    llm: &dyn LlmBackend,
) -> Result<String, AgentError> {
    if let Some(cached) = agent.opinions.get(candidate) {
        if cached.memory_count == agent.memories.len() {
            return Ok(cached.text.clone());
        }
    }
    let memories = agent.recall(&format!("{candidate} {proposal}"), k, weights);
    let prompt = prompts::fill(
        prompts::OPINION,
        &[("persona", &agent.persona), ("name", agent.name()), ("candidate", candidate), ("memories", &memories)],
    );
    let text = agent.ask(PromptKind::Opinion, prompt, OPINION_CHARS, llm)?;
    agent.opinions.insert(
        candidate.to_string(),
        CachedOpinion { memory_count: agent.memories.len(), text: text.clone() },
    );
    Ok(text)
}

/// Opinion of `candidate` updated with the agent's latest observations.
pub fn current_opinion_on_candidate(
    agent: &AgentState,
    candidate: &str,
    opinion: &str,
    window: usize,
    llm: &dyn LlmBackend,
) -> Result<String, AgentError> {
    let observations = prompts::bullets(
        agent
            .memories
            .latest_with_tag(MemoryTag::Observation, window)
            .into_iter()
            .map(|m| m.text.as_str()),
    );
    let prompt = prompts::fill(
        prompts::CURRENT_OPINION,
        &[
            ("persona", &agent.persona),
            ("name", agent.name()),
            ("candidate", candidate),
            ("opinion", opinion),
            ("observations", &observations),
        ],
    );
    Ok(agent.ask(PromptKind::CurrentOpinion, prompt, OPINION_CHARS, llm)?)
}

/// Candidate-only: plan for improving public perception of the campaign.
pub fn plan_public_perception(
    agent: &AgentState,
    opponent: &str,
    k: usize,
    weights: RetrievalWeights,
    llm: &dyn LlmBackend,
) -> Result<String, AgentError> {
    if agent.role() != AgentRole::Candidate {
        return Err(AgentError::Role {
            agent: agent.name().to_string(),
            component: "plan_public_perception",
            role: agent.role(),
        });
    }
    let proposal = agent.spec.policy_proposal.clone().unwrap_or_default();
    let memories = agent.recall(&format!("{} {opponent} opinion", agent.name()), k, weights);
    let prompt = prompts::fill(
        prompts::PERCEPTION_PLAN,
        &[
            ("persona", &agent.persona),
            ("name", agent.name()),
            ("opponent", opponent),
            ("proposal", &proposal),
            ("memories", &memories),
        ],
    );
    Ok(agent.ask(PromptKind::PerceptionPlan, prompt, PLAN_CHARS, llm)?)
}

/// Malicious-only: strategy for promoting `favored` and harming `opponent`.
pub fn plan_malicious(
    agent: &AgentState,
    favored: &str,
    opponent: &str,
    k: usize,
    weights: RetrievalWeights,
    llm: &dyn LlmBackend,
) -> Result<String, AgentError> {
    if agent.role() != AgentRole::Malicious {
        return Err(AgentError::Role {
            agent: agent.name().to_string(),
            component: "plan_malicious",
            role: agent.role(),
        });
    }
    let memories = agent.recall(&format!("{favored} {opponent} opinion"), k, weights);
    let prompt = prompts::fill(
        prompts::MALICIOUS_PLAN,
        &[
            ("persona", &agent.persona),
            ("name", agent.name()),
            ("favored", favored),
            ("opponent", opponent),
            ("memories", &memories),
        ],
    );
    Ok(agent.ask(PromptKind::MaliciousPlan, prompt, PLAN_CHARS, llm)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::llm::{Recording, ScriptedBackend, ScriptedRule, ScriptedRules};
    use crate::persona::random_big5;
    use crate::rng::stream;
    use crate::scenario::{builtin_storhampton_scenario, ExperimentVariant};

    pub(crate) fn echo_backend() -> ScriptedBackend {
        let rules = PromptKind::ALL.iter().map(|k| ScriptedRule::fallback(*k, &["{agent} says ok"])).collect();
        ScriptedBackend::new(ScriptedRules { rules }).unwrap()
    }

    pub(crate) fn agent(role_index: usize) -> AgentState {
        let cfg = builtin_storhampton_scenario(ExperimentVariant::Malicious, 10);
        let spec = cfg.agents[role_index].clone();
        let spec = AgentSpec { goal: cfg.render(&spec.goal), ..spec };
        let traits = random_big5(&mut stream(1, &spec.name));
        let persona = crate::persona::describe_persona(&spec, &traits, None);
        let mut memories = MemoryStore::new();
        let t = cfg.start_datetime();
        memories.push(MemoryRecord::new(t, "Bill Fredrickson promises jobs", MemoryTag::Formative)).unwrap();
        AgentState {
            spec,
            traits,
            backstory: String::new(),
            persona,
            account: AccountId::from("1"),
            memories,
            opinions: BTreeMap::new(),
        }
    }

    fn first_of_role(role: AgentRole) -> usize {
        builtin_storhampton_scenario(ExperimentVariant::Malicious, 10)
            .agents
            .iter()
            .position(|a| a.role == role)
            .unwrap()
    }

    #[test]
    fn opinion_is_cached_until_memory_changes() {
        let llm = Recording::new(echo_backend());
        let mut a = agent(first_of_role(AgentRole::Voter));
        let w = RetrievalWeights::default();
        opinion_on_candidate(&mut a, "Bill Fredrickson", "jobs", 4, w, &llm).unwrap();
        opinion_on_candidate(&mut a, "Bill Fredrickson", "jobs", 4, w, &llm).unwrap();
        assert_eq!(llm.transcript().len(), 1);
        let t = a.memories.records().last().unwrap().timestamp;
        a.remember(t, "Bill was seen at the factory", MemoryTag::Observation).unwrap();
        opinion_on_candidate(&mut a, "Bill Fredrickson", "jobs", 4, w, &llm).unwrap();
        assert_eq!(llm.transcript().len(), 2);
        let prompt = &llm.transcript()[1].request.prompt_text;
        assert!(prompt.contains("Bill was seen at the factory"));
    }

    #[test]
    fn current_opinion_sees_recent_observations_only() {
        let llm = Recording::new(echo_backend());
        let mut a = agent(first_of_role(AgentRole::Voter));
        let t = a.memories.records()[0].timestamp;
        for i in 0..5 {
            a.remember(t, format!("observation number {i}"), MemoryTag::Observation).unwrap();
        }
        current_opinion_on_candidate(&a, "Bradley Carter", "fine", 2, &llm).unwrap();
        let prompt = &llm.transcript()[0].request.prompt_text;
        assert!(prompt.contains("observation number 4") && prompt.contains("observation number 3"));
        assert!(!prompt.contains("observation number 2"));
        assert_eq!(llm.transcript()[0].request.prompt_kind, PromptKind::CurrentOpinion);
    }

    #[test]
    fn plans_are_role_gated() {
        let llm = echo_backend();
        let w = RetrievalWeights::default();
        let voter = agent(first_of_role(AgentRole::Voter));
        let candidate = agent(first_of_role(AgentRole::Candidate));
        let malicious = agent(first_of_role(AgentRole::Malicious));
        assert!(plan_public_perception(&candidate, "Bradley Carter", 4, w, &llm).is_ok());
        assert!(matches!(
            plan_public_perception(&voter, "x", 4, w, &llm),
            Err(AgentError::Role { component: "plan_public_perception", .. })
        ));
        assert!(plan_malicious(&malicious, "Bill Fredrickson", "Bradley Carter", 4, w, &llm).is_ok());
        assert!(matches!(plan_malicious(&candidate, "a", "b", 4, w, &llm), Err(AgentError::Role { .. })));
    }
}
