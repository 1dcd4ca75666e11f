use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, LlmBackend, LlmError, PromptKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRule {
    pub kind: PromptKind,
    /// Regular expression that must match the whole agent name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Substring that must occur in the prompt text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Replies served in rotation. `{agent}` expands to the agent name.
    pub responses: Vec<String>,
}

impl ScriptedRule {
    pub fn fallback(kind: PromptKind, responses: &[&str]) -> Self {
        Self {
            kind,
            agent: None,
            contains: None,
            responses: responses.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn is_fallback(&self) -> bool {
        self.agent.is_none() && self.contains.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRules {
    pub rules: Vec<ScriptedRule>,
}

impl ScriptedRules {
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let rules: ScriptedRules =
            toml::from_str(text).map_err(|e| LlmError::InvalidRules(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidRules(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every rule has replies and a valid agent pattern, and every prompt
    /// kind has an unconditional fallback rule.
    pub fn validate(&self) -> Result<(), LlmError> {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.responses.is_empty() {
                return Err(LlmError::InvalidRules(format!("rule {i} has no responses")));
            }
            if let Some(pattern) = &rule.agent {
                Regex::new(pattern)
                    .map_err(|e| LlmError::InvalidRules(format!("rule {i}: {e}")))?;
            }
        }
        let missing: Vec<_> = PromptKind::ALL
            .iter()
            .filter(|k| !self.rules.iter().any(|r| r.kind == **k && r.is_fallback()))
            .map(|k| k.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(LlmError::InvalidRules(format!(
                "no fallback rule for: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("rules serialize");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rules serialize")
    }
}

/// Deterministic rule-driven stand-in for a language model.
///
/// The first matching rule answers. Each rule keeps one rotation counter per
/// agent, so the reply an agent receives depends only on the rules and that
/// agent's own call sequence, never on how calls from different agents
/// interleave.
pub struct ScriptedBackend {
    rules: ScriptedRules,
    agent_patterns: Vec<Option<Regex>>,
    counters: Mutex<HashMap<(usize, String), u64>>,
}

impl ScriptedBackend {
    /// Builds a backend without requiring a fallback for every kind; calls
    /// that match nothing fail with [`LlmError::NoMatchingRule`].
    pub fn new(rules: ScriptedRules) -> Result<Self, LlmError> {
        let agent_patterns = rules
            .rules
            .iter()
            .map(|r| {
                r.agent
                    .as_ref()
                    .map(|p| Regex::new(&format!("^(?:{p})$")))
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LlmError::InvalidRules(e.to_string()))?;
        Ok(Self { rules, agent_patterns, counters: Mutex::new(HashMap::new()) })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Self::new(ScriptedRules::load(path)?)
    }

    pub fn rules(&self) -> &ScriptedRules {
        &self.rules
    }

    fn find_rule(&self, request: &CompletionRequest) -> Option<usize> {
        self.rules.rules.iter().enumerate().position(|(i, rule)| {
            rule.kind == request.prompt_kind
                && self.agent_patterns[i]
                    .as_ref()
                    .is_none_or(|re| re.is_match(&request.agent_name))
                && rule
                    .contains
                    .as_ref()
                    .is_none_or(|needle| request.prompt_text.contains(needle.as_str()))
        })
    }
}

impl LlmBackend for ScriptedBackend {
    fn generate(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let idx = self.find_rule(request).ok_or_else(|| LlmError::NoMatchingRule {
            kind: request.prompt_kind,
            agent: request.agent_name.clone(),
        })?;
        let rule = &self.rules.rules[idx];
        let call = {
            let mut counters = self.counters.lock().expect("counter lock");
            let counter = counters.entry((idx, request.agent_name.clone())).or_insert(0);
            let current = *counter;
            *counter += 1;
            current
        };
        let reply = &rule.responses[(call % rule.responses.len() as u64) as usize];
        Ok(reply.replace("{agent}", &request.agent_name))
    }

    fn identity(&self) -> String {
        format!("scripted:sha256:{}", self.rules.content_hash())
    }

    fn export_state(&self) -> Option<serde_json::Value> {
        let counters = self.counters.lock().expect("counter lock");
        let ordered: BTreeMap<String, u64> = counters
            .iter()
            .map(|((idx, agent), n)| (format!("{idx}/{agent}"), *n))
            .collect();
        Some(serde_json::to_value(ordered).expect("counters serialize"))
    }

    fn import_state(&self, state: &serde_json::Value) -> Result<(), LlmError> {
        let ordered: BTreeMap<String, u64> = serde_json::from_value(state.clone())
            .map_err(|e| LlmError::State(e.to_string()))?;
        let mut restored = HashMap::new();
        for (key, n) in ordered {
            let (idx, agent) = key
                .split_once('/')
                .ok_or_else(|| LlmError::State(format!("bad counter key `{key}`")))?;
            let idx: usize = idx.parse().map_err(|_| LlmError::State(format!("bad rule index in `{key}`")))?;
            if idx >= self.rules.rules.len() {
                return Err(LlmError::State(format!("counter for unknown rule {idx}")));
            }
            restored.insert((idx, agent.to_string()), n);
        }
        *self.counters.lock().expect("counter lock") = restored;
        Ok(())
    }
}
