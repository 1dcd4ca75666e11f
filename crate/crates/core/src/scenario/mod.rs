//! Experiment definition: agents, candidates, shared texts and every run
//! parameter, loaded from a single TOML document.

mod storhampton;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::LlmParams;
use crate::persona::ScoringMap;

pub use storhampton::{
    apply_variant, bias_sentence, builtin_storhampton_scenario, BENIGN_GOAL, BIAS_PHRASE,
    BILL_NAME, BILL_PROPOSAL, BRADLEY_NAME, BRADLEY_PROPOSAL, CANDIDATE_GOAL,
    CONSERVATIVE_PLACEHOLDER, GLENN_NAME, MALICIOUS_BASE_RATE, MALICIOUS_GOAL, MASTODON_USAGE,
    PROGRESSIVE_PLACEHOLDER, SHARED_CONTEXT,
};

pub const DEFAULT_START_TIME: &str = "2024-10-15T00:00:00";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentVariant {
    Control,
    Bias,
    Malicious,
}

impl std::str::FromStr for ExperimentVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "control" => Ok(Self::Control),
            "bias" => Ok(Self::Bias),
            "malicious" => Ok(Self::Malicious),
            other => Err(format!("unknown experiment variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Voter,
    Candidate,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitMode {
    Big5Random,
    SchwartzSampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub gender: String,
    pub age: u32,
    pub role: AgentRole,
    pub goal: String,
    #[serde(default)]
    pub extra_context: Vec<String>,
    #[serde(default)]
    pub policy_proposal: Option<String>,
    /// App openings per day; falls back to the scheduler default.
    #[serde(default)]
    pub base_rate: Option<u32>,
    #[serde(default = "default_trait_mode")]
    pub trait_mode: TraitMode,
}

fn default_trait_mode() -> TraitMode {
    TraitMode::Big5Random
}

/// How the one-directional follow probability is drawn for a resident pair
/// that did not connect reciprocally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneWayMode {
    /// Each direction is an independent draw with probability `p2`.
    PerDirection,
    /// One draw with probability `p2` decides whether a single edge exists;
    /// its direction is a fair coin.
    PerPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub p1: f64,
    pub p2: f64,
    pub one_way_mode: OneWayMode,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { p1: 0.2, p2: 0.15, one_way_mode: OneWayMode::PerDirection }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerParams {
    pub base_rate_default: u32,
    pub stochastic_rate: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self { base_rate_default: 5, stochastic_rate: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeParams {
    /// Timeline entries rendered into the action prompt.
    pub feed_window: usize,
    pub max_actions_per_session: usize,
    /// Memories retrieved per component prompt.
    pub retrieval_k: usize,
    pub recency_weight: f64,
    pub relevance_weight: f64,
    pub num_anecdotes: usize,
    /// Perceive/decide worker threads; `None` means one per active agent, capped.
    pub workers: Option<usize>,
    pub survey_to_memory: bool,
    pub exclude_candidates_from_share: bool,
    pub include_malicious_in_share: bool,
}

impl Default for RuntimeParams {
    fn default() -> Self {
        Self {
            feed_window: 10,
            max_actions_per_session: 3,
            retrieval_k: 8,
            recency_weight: 0.1,
            relevance_weight: 1.0,
            num_anecdotes: 3,
            workers: None,
            survey_to_memory: false,
            exclude_candidates_from_share: true,
            include_malicious_in_share: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonaParams {
    /// Lower edges of the age buckets; the last bucket is open-ended.
    pub age_bins: Vec<u32>,
    pub ipsatize: bool,
    /// Respondent table for Schwartz sampling, relative to the scenario file.
    pub dataset: Option<String>,
    pub scoring_map: ScoringMap,
}

impl Default for PersonaParams {
    fn default() -> Self {
        Self {
            age_bins: vec![18, 30, 40, 50, 60, 70],
            ipsatize: false,
            dataset: None,
            scoring_map: ScoringMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub num_agents: Option<usize>,
    #[serde(default = "default_episodes")]
    pub episodes_per_day: u32,
    #[serde(default = "default_episode_minutes")]
    pub episode_minutes: u32,
    #[serde(default = "default_start_time")]
    pub start_time: String,
    #[serde(default = "default_variant")]
    pub experiment_variant: ExperimentVariant,
    #[serde(default)]
    pub graph: GraphParams,
    #[serde(default)]
    pub scheduler: SchedulerParams,
    #[serde(default)]
    pub runtime: RuntimeParams,
    #[serde(default)]
    pub persona: PersonaParams,
    #[serde(default)]
    pub llm: LlmParams,
    /// Placeholder → replacement applied to every text before it reaches a
    /// prompt or a memory.
    #[serde(default)]
    pub substitutions: BTreeMap<String, String>,
    #[serde(default)]
    pub shared_context: Vec<String>,
    #[serde(default)]
    pub mastodon_usage_instructions: Vec<String>,
    pub agents: Vec<AgentSpec>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_episodes() -> u32 {
    48
}
fn default_episode_minutes() -> u32 {
    30
}
fn default_start_time() -> String {
    DEFAULT_START_TIME.to_string()
}
fn default_variant() -> ExperimentVariant {
    ExperimentVariant::Control
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let mut config = parse_scenario(&text)?;
    config.base_dir = path.parent().map(Path::to_path_buf);
    Ok(config)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));

        if self.episodes_per_day < 1 {
            return invalid("episodes_per_day must be at least 1".into());
        }
        if self.episode_minutes < 1 {
            return invalid("episode_minutes must be at least 1".into());
        }
        if NaiveDateTime::parse_from_str(&self.start_time, TIME_FORMAT).is_err() {
            return invalid(format!("start_time `{}` is not YYYY-MM-DDTHH:MM:SS", self.start_time));
        }
        for (name, p) in [
            ("graph.p1", self.graph.p1),
            ("graph.p2", self.graph.p2),
            ("scheduler.stochastic_rate", self.scheduler.stochastic_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} = {p} is not a probability in [0, 1]"));
            }
        }
        if self.scheduler.base_rate_default > self.episodes_per_day {
            return invalid(format!(
                "scheduler.base_rate_default {} exceeds episodes_per_day {}",
                self.scheduler.base_rate_default, self.episodes_per_day
            ));
        }
        if let Some(n) = self.num_agents {
            if n != self.agents.len() {
                return invalid(format!(
                    "num_agents = {n} but {} agents are listed",
                    self.agents.len()
                ));
            }
        }

        let mut names = HashSet::new();
        for agent in &self.agents {
            if agent.name.trim().is_empty() {
                return invalid("agent name must not be empty".into());
            }
            if !names.insert(agent.name.as_str()) {
                return invalid(format!("agent name `{}` is not unique", agent.name));
            }
            let is_candidate = agent.role == AgentRole::Candidate;
            if agent.policy_proposal.is_some() != is_candidate {
                return invalid(format!(
                    "agent `{}`: policy_proposal must be present exactly for candidates",
                    agent.name
                ));
            }
            if let Some(rate) = agent.base_rate {
                if rate > self.episodes_per_day {
                    return invalid(format!(
                        "agent `{}`: base_rate {rate} exceeds episodes_per_day {}",
                        agent.name, self.episodes_per_day
                    ));
                }
            }
            if agent.trait_mode == TraitMode::SchwartzSampled && self.persona.dataset.is_none() {
                return invalid(format!(
                    "agent `{}` uses schwartz_sampled traits but persona.dataset is unset",
                    agent.name
                ));
            }
        }

        let candidates = self.candidates();
        if candidates.len() != 2 {
            return invalid(format!(
                "exactly two agents must have role=candidate, found {}",
                candidates.len()
            ));
        }
        let first = |s: &AgentSpec| s.name.split_whitespace().next().unwrap_or("").to_lowercase();
        if first(candidates[0]) == first(candidates[1]) {
            return invalid("candidates must have distinct first names".into());
        }
        let malicious = self.agents.iter().filter(|a| a.role == AgentRole::Malicious).count();
        if malicious > 1 {
            return invalid(format!("at most one agent may be malicious, found {malicious}"));
        }
        if self.agents.iter().all(|a| a.role == AgentRole::Candidate) {
            return invalid("at least one non-candidate agent is required".into());
        }

        if self.persona.age_bins.is_empty()
            || self.persona.age_bins.windows(2).any(|w| w[0] >= w[1])
        {
            return invalid("persona.age_bins must be non-empty and strictly increasing".into());
        }
        self.persona.scoring_map.validate().map_err(ScenarioError::Invalid)?;

        let rt = &self.runtime;
        if rt.feed_window == 0 || rt.max_actions_per_session == 0 || rt.retrieval_k == 0 {
            return invalid(
                "runtime.feed_window, max_actions_per_session and retrieval_k must be ≥ 1".into(),
            );
        }
        if rt.workers == Some(0) {
            return invalid("runtime.workers must be ≥ 1 when set".into());
        }
        Ok(())
    }

    pub fn candidates(&self) -> Vec<&AgentSpec> {
        self.agents.iter().filter(|a| a.role == AgentRole::Candidate).collect()
    }

    pub fn candidate_names(&self) -> Vec<String> {
        self.candidates().into_iter().map(|a| a.name.clone()).collect()
    }

    pub fn base_rate_of(&self, agent: &AgentSpec) -> u32 {
        agent.base_rate.unwrap_or(self.scheduler.base_rate_default)
    }

    pub fn start_datetime(&self) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(&self.start_time, TIME_FORMAT)
            .expect("start_time is checked by validate")
    }

    /// Resolves placeholders such as `[Conservative Candidate]`.
    pub fn render(&self, text: &str) -> String {
        self.substitutions
            .iter()
            .fold(text.to_string(), |acc, (from, to)| acc.replace(from.as_str(), to))
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        let raw = self.persona.dataset.as_ref()?;
        let path = PathBuf::from(raw);
        Some(match (&self.base_dir, path.is_relative()) {
            (Some(dir), true) => dir.join(path),
            _ => path,
        })
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
