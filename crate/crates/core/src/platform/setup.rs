use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use super::{AccountId, Platform, Toot, MAX_TOOT_CHARS};
use crate::agent::prompts;
use crate::llm::{truncate_chars, CompletionRequest, LlmBackend, PromptKind};
use crate::scenario::AgentSpec;
use crate::SimError;

pub const INTRO_CHARS: usize = MAX_TOOT_CHARS;

/// Mastodon-style handle derived from a display name: `Rosa O'Neill` →
/// `rosa_o_neill`.
pub fn username_for(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    let trimmed = out.trim_end_matches('_');
    if trimmed.is_empty() {
        "user".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Profile bio summarizing the agent's context.
pub fn bio_for(spec: &AgentSpec) -> String {
    let mut bio = format!("{}, {}. {}", spec.gender, spec.age, spec.goal.trim_end_matches('.'));
    if let Some(proposal) = &spec.policy_proposal {
        bio.push_str(". Campaigning on ");
        bio.push_str(proposal);
    }
    for line in &spec.extra_context {
        bio.push(' ');
        bio.push_str(line);
    }
    truncate_chars(&bio, MAX_TOOT_CHARS)
}

/// Binds each agent to an account, setting display name and bio.
/// Re-provisioning the same specs returns the same bindings.
pub fn provision_accounts(
    platform: &mut dyn Platform,
    specs: &[AgentSpec],
) -> Result<BTreeMap<String, AccountId>, SimError> {
    let mut taken = BTreeSet::new();
    let mut bindings = BTreeMap::new();
    for spec in specs {
        let base = username_for(&spec.name);
        let mut username = base.clone();
        let mut n = 2;
        while !taken.insert(username.clone()) {
            username = format!("{base}_{n}");
            n += 1;
        }
        let id = platform.provision_account(&username, &spec.name, &bio_for(spec))?;
        bindings.insert(spec.name.clone(), id);
    }
    Ok(bindings)
}

/// One introductory toot per agent, in the given order.
///
/// Each entry is `(name, persona description, account)`.
pub fn post_introductions(
    platform: &mut dyn Platform,
    agents: &[(String, String, AccountId)],
    llm: &dyn LlmBackend,
) -> Result<Vec<Toot>, SimError> {
    let mut toots = Vec::with_capacity(agents.len());
    for (name, persona, account) in agents {
        let prompt = prompts::fill(prompts::INTRODUCTION, &[("persona", persona), ("name", name)]);
        let req = CompletionRequest::new(PromptKind::TootContent, name, prompt, INTRO_CHARS);
        let mut text = llm.complete(&req)?;
        if text.trim().is_empty() {
            warn!("empty introduction for {name}; posting a greeting instead");
            text = format!("Hello, I'm {name}.");
        }
        toots.push(platform.post_toot(account, &text)?);
    }
    Ok(toots)
}
