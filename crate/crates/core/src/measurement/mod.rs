//! Vote and favorability surveys, per-episode analytics, and exporters.

mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::memory::{MemoryTag, RetrievalWeights};
use crate::agent::{prompts, AgentState};
use crate::llm::{CompletionRequest, LlmBackend, LlmError, PromptKind};
use crate::platform::{AccountId, EventKind, EventPayload, PlatformState};
use crate::scenario::AgentRole;

pub use export::{
    export, render_chart_svg, render_gexf, survey_csv, analytics_csv, ExportError, ExportFormat,
};

pub const UNDECIDED: &str = "undecided";
const POLL_CHARS: usize = 200;

/// Answer to the voting question.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Vote {
    Candidate(String),
    Undecided,
}

impl From<String> for Vote {
    fn from(s: String) -> Self {
        if s == UNDECIDED {
            Vote::Undecided
        } else {
            Vote::Candidate(s)
        }
    }
}

impl From<Vote> for String {
    fn from(v: Vote) -> Self {
        v.to_string()
    }
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vote::Candidate(name) => f.write_str(name),
            Vote::Undecided => f.write_str(UNDECIDED),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub episode: u32,
    pub agent: String,
    pub role: AgentRole,
    pub vote: Vote,
    /// Candidate → rating in 1..=10, `None` when no usable answer was given.
    pub favorability: BTreeMap<String, Option<u8>>,
    /// A backend call failed while polling this agent.
    #[serde(default)]
    pub backend_error: bool,
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether `text` names `candidate` by first or last name as a whole word.
pub fn mentions_candidate(text: &str, candidate: &str) -> bool {
    let w = words(text);
    let mut parts = candidate.split_whitespace();
    let first = parts.next();
    let last = parts.last();
    first.into_iter().chain(last).any(|p| w.contains(&p.to_lowercase()))
}

/// Exactly one candidate named → that candidate; none or several → undecided.
pub fn parse_vote(text: &str, candidates: &[String]) -> Vote {
    let matched: Vec<&String> = candidates.iter().filter(|c| mentions_candidate(text, c)).collect();
    match matched.as_slice() {
        [one] => Vote::Candidate((*one).clone()),
        _ => Vote::Undecided,
    }
}

fn number_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"))
}

/// The first number in `text`, if it is an integer between 1 and 10.
pub fn parse_favorability(text: &str) -> Option<u8> {
    let token = number_token().find(text)?.as_str();
    let n: i64 = token.parse().ok()?;
    (1..=10).contains(&n).then_some(n as u8)
}

fn survey_context(agent: &AgentState, candidates: &[String], k: usize, weights: RetrievalWeights) -> String {
    let recalled = agent.memories.retrieve(&candidates.join(" "), k, weights);
    format!(
        "What {} remembers about the election:\n{}",
        agent.name(),
        prompts::bullets(recalled.into_iter().map(|m| m.text.as_str()))
    )
}

fn ask(agent: &AgentState, kind: PromptKind, prompt: String, llm: &dyn LlmBackend) -> Result<String, LlmError> {
    llm.complete(&CompletionRequest::new(kind, agent.name(), prompt, POLL_CHARS))
}

pub fn poll_vote(agent: &AgentState, candidates: &[String], context: &str, llm: &dyn LlmBackend) -> Result<Vote, LlmError> {
    let prompt = prompts::fill(
        prompts::VOTE_POLL,
        &[("persona", &agent.persona), ("context", context), ("name", agent.name())],
    );
    Ok(parse_vote(&ask(agent, PromptKind::VotePoll, prompt, llm)?, candidates))
}

/// One retry on an unusable answer, then missing.
pub fn poll_favorability(
    agent: &AgentState,
    candidate: &str,
    context: &str,
    llm: &dyn LlmBackend,
) -> Result<Option<u8>, LlmError> {
    let prompt = prompts::fill(
        prompts::FAVORABILITY_POLL,
        &[("persona", &agent.persona), ("context", context), ("name", agent.name()), ("candidate", candidate)],
    );
    for _ in 0..2 {
        if let Some(score) = parse_favorability(&ask(agent, PromptKind::FavorabilityPoll, prompt.clone(), llm)?) {
            return Ok(Some(score));
        }
    }
    Ok(None)
}

/// Polls vote and every favorability. Never fails: a backend error leaves
/// the remaining answers undecided or missing and sets `backend_error`.
pub fn survey_agent(
    agent: &AgentState,
    episode: u32,
    candidates: &[String],
    k: usize,
    weights: RetrievalWeights,
    llm: &dyn LlmBackend,
) -> SurveyRecord {
    let context = survey_context(agent, candidates, k, weights);
    let mut record = SurveyRecord {
        episode,
        agent: agent.name().to_string(),
        role: agent.role(),
        vote: Vote::Undecided,
        favorability: candidates.iter().map(|c| (c.clone(), None)).collect(),
        backend_error: false,
    };
    let outcome = (|| {
        record.vote = poll_vote(agent, candidates, &context, llm)?;
        for c in candidates {
            let score = poll_favorability(agent, c, &context, llm)?;
            record.favorability.insert(c.clone(), score);
        }
        Ok::<_, LlmError>(())
    })();
    if let Err(e) = outcome {
        warn!("survey of {} in episode {episode} failed: {e}", agent.name());
        record.backend_error = true;
    }
    record
}

/// Text remembered when surveys are written to memory.
pub fn survey_memory(record: &SurveyRecord) -> (String, MemoryTag) {
    let ratings = record
        .favorability
        .iter()
        .map(|(c, s)| format!("{c} {}", s.map_or("-".to_string(), |s| s.to_string())))
        .collect::<Vec<_>>()
        .join(", ");
    (format!("{} told a pollster they would vote for {}; ratings: {ratings}", record.agent, record.vote), MemoryTag::Survey)
}

/// Who counts in the vote-share denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareFilter {
    pub exclude_candidates: bool,
    pub include_malicious: bool,
}

impl Default for ShareFilter {
    fn default() -> Self {
        Self { exclude_candidates: true, include_malicious: true }
    }
}

impl ShareFilter {
    pub fn admits(&self, role: AgentRole) -> bool {
        match role {
            AgentRole::Voter => true,
            AgentRole::Candidate => !self.exclude_candidates,
            AgentRole::Malicious => self.include_malicious,
        }
    }
}

/// Candidate (and `undecided`) → fraction of admitted respondents. With no
/// respondents everything is undecided, so the shares always sum to one.
pub fn vote_share<'a>(
    records: impl IntoIterator<Item = &'a SurveyRecord>,
    candidates: &[String],
    filter: ShareFilter,
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = candidates.iter().map(|c| (c.clone(), 0)).collect();
    counts.insert(UNDECIDED.to_string(), 0);
    let mut total = 0usize;
    for r in records.into_iter().filter(|r| filter.admits(r.role)) {
        total += 1;
        let key = match &r.vote {
            Vote::Candidate(c) if counts.contains_key(c) => c.clone(),
            _ => UNDECIDED.to_string(),
        };
        *counts.get_mut(&key).expect("key present") += 1;
    }
    if total == 0 {
        counts.insert(UNDECIDED.to_string(), 1);
        total = 1;
    }
    counts.into_iter().map(|(k, n)| (k, n as f64 / total as f64)).collect()
}

/// Mean of the present ratings per candidate over admitted respondents.
pub fn mean_favorability<'a>(
    records: impl IntoIterator<Item = &'a SurveyRecord> + Clone,
    candidates: &[String],
    filter: ShareFilter,
) -> BTreeMap<String, Option<f64>> {
    candidates
        .iter()
        .map(|c| {
            let scores: Vec<f64> = records
                .clone()
                .into_iter()
                .filter(|r| filter.admits(r.role))
                .filter_map(|r| r.favorability.get(c).copied().flatten())
                .map(f64::from)
                .collect();
            let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
            (c.clone(), mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsSnapshot {
    pub episode: u32,
    pub respondents: usize,
    pub vote_share: BTreeMap<String, f64>,
    pub mean_favorability: BTreeMap<String, Option<f64>>,
    /// Events of this episode by kind; every kind is present.
    pub activity_counts: BTreeMap<EventKind, usize>,
    /// Toots and replies of this episode naming each candidate.
    pub candidate_mentions: BTreeMap<String, usize>,
    pub follow_edges: Vec<(AccountId, AccountId)>,
    pub active_accounts: Vec<AccountId>,
}

/// Snapshot of one episode from its survey records and the platform log.
pub fn aggregate(
    records: &[SurveyRecord],
    episode: u32,
    candidates: &[String],
    filter: ShareFilter,
    state: &PlatformState,
    active_accounts: Vec<AccountId>,
) -> AnalyticsSnapshot {
    let of_episode: Vec<&SurveyRecord> = records.iter().filter(|r| r.episode == episode).collect();
    let mut activity_counts: BTreeMap<EventKind, usize> = EventKind::ALL.iter().map(|k| (*k, 0)).collect();
    let mut candidate_mentions: BTreeMap<String, usize> = candidates.iter().map(|c| (c.clone(), 0)).collect();
    for event in state.events_in_episode(episode as i64) {
        *activity_counts.entry(event.kind).or_default() += 1;
        let text = match &event.payload {
            EventPayload::Toot { text, .. } | EventPayload::Reply { text, .. } => text,
            _ => continue,
        };
        for c in candidates {
            if mentions_candidate(text, c) {
                *candidate_mentions.get_mut(c).expect("candidate present") += 1;
            }
        }
    }
    AnalyticsSnapshot {
        episode,
        respondents: of_episode.iter().filter(|r| filter.admits(r.role)).count(),
        vote_share: vote_share(of_episode.iter().copied(), candidates, filter),
        mean_favorability: mean_favorability(of_episode.iter().copied(), candidates, filter),
        activity_counts,
        candidate_mentions,
        follow_edges: state.follow_edges().iter().cloned().collect(),
        active_accounts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tests::agent;
    use crate::llm::{Recording, ScriptedBackend, ScriptedRule, ScriptedRules};
    use proptest::prelude::*;

    fn cands() -> Vec<String> {
        vec!["Bill Fredrickson".to_string(), "Bradley Carter".to_string()]
    }

    #[test]
    fn vote_parsing_fixtures() {
        let c = cands();
        assert_eq!(parse_vote("Bill", &c), Vote::Candidate(c[0].clone()));
        assert_eq!(parse_vote("bill", &c), Vote::Candidate(c[0].clone()));
        assert_eq!(parse_vote("I think Bradley Carter!", &c), Vote::Candidate(c[1].clone()));
        assert_eq!(parse_vote("Fredrickson.", &c), Vote::Candidate(c[0].clone()));
        assert_eq!(parse_vote("Bill or Bradley", &c), Vote::Undecided);
        assert_eq!(parse_vote("neither", &c), Vote::Undecided);
        assert_eq!(parse_vote("", &c), Vote::Undecided);
        assert_eq!(parse_vote("Billboards everywhere", &c), Vote::Undecided);
    }

    #[test]
    fn favorability_parsing_fixtures() {
        assert_eq!(parse_favorability("7"), Some(7));
        assert_eq!(parse_favorability("I'd say 10/10"), Some(10));
        assert_eq!(parse_favorability("eleven"), None);
        assert_eq!(parse_favorability("11"), None);
        assert_eq!(parse_favorability("0"), None);
        assert_eq!(parse_favorability("-3 then 5"), None);
        assert_eq!(parse_favorability("7.5"), None);
        assert_eq!(parse_favorability("about 4, maybe 6"), Some(4));
    }

    fn backend(vote: &[&str], fav: &[&str]) -> ScriptedBackend {
        ScriptedBackend::new(ScriptedRules {
            rules: vec![
                ScriptedRule::fallback(PromptKind::VotePoll, vote),
                ScriptedRule::fallback(PromptKind::FavorabilityPoll, fav),
            ],
        })
        .unwrap()
    }

    #[test]
    fn favorability_retries_once_then_missing() {
        let a = agent(3);
        let llm = Recording::new(backend(&["Bill"], &["eleven"]));
        assert_eq!(poll_favorability(&a, "Bill Fredrickson", "", &llm).unwrap(), None);
        assert_eq!(llm.transcript().len(), 2);
        let llm = backend(&["Bill"], &["no idea", "8"]);
        assert_eq!(poll_favorability(&a, "Bill Fredrickson", "", &llm).unwrap(), Some(8));
    }

    #[test]
    fn survey_uses_the_poll_wording() {
        let a = agent(3);
        let llm = Recording::new(backend(&["Bradley"], &["6"]));
        let r = survey_agent(&a, 4, &cands(), 4, RetrievalWeights::default(), &llm);
        assert_eq!(r.vote, Vote::Candidate("Bradley Carter".into()));
        assert_eq!(r.favorability.values().copied().collect::<Vec<_>>(), vec![Some(6), Some(6)]);
        assert!(!r.backend_error);
        let t = llm.transcript();
        assert!(t[0].request.prompt_text.contains(&format!("{} is going to cast a vote", a.name())));
        assert!(t[1].request.prompt_text.contains("on a scale of 1 to 10"));
    }

    #[test]
    fn backend_failure_is_flagged_not_fatal() {
        let a = agent(3);
        let llm = ScriptedBackend::new(ScriptedRules { rules: vec![ScriptedRule::fallback(PromptKind::VotePoll, &["Bill"])] }).unwrap();
        let r = survey_agent(&a, 0, &cands(), 4, RetrievalWeights::default(), &llm);
        assert!(r.backend_error);
        assert_eq!(r.vote, Vote::Candidate("Bill Fredrickson".into()));
        assert!(r.favorability.values().all(Option::is_none));
    }

    fn record(agent: &str, role: AgentRole, vote: Vote, fav: u8) -> SurveyRecord {
        SurveyRecord {
            episode: 0,
            agent: agent.into(),
            role,
            vote,
            favorability: cands().into_iter().map(|c| (c, Some(fav))).collect(),
            backend_error: false,
        }
    }

    #[test]
    fn hand_counted_shares() {
        let c = cands();
        let mut rs = Vec::new();
        for i in 0..20 {
            let vote = match i {
                0..=11 => Vote::Candidate(c[0].clone()),
                12..=17 => Vote::Candidate(c[1].clone()),
                _ => Vote::Undecided,
            };
            rs.push(record(&format!("a{i}"), AgentRole::Voter, vote, 7));
        }
        let share = vote_share(&rs, &c, ShareFilter::default());
        assert_eq!(share[&c[0]], 12.0 / 20.0);
        assert_eq!(share[&c[1]], 6.0 / 20.0);
        assert_eq!(share[UNDECIDED], 2.0 / 20.0);
        let fav = mean_favorability(&rs, &c, ShareFilter::default());
        assert_eq!(fav[&c[0]], Some(7.0));
        assert_eq!(fav[&c[1]], Some(7.0));
    }

    #[test]
    fn filters_apply_to_roles() {
        let c = cands();
        let rs = vec![
            record("bill", AgentRole::Candidate, Vote::Candidate(c[0].clone()), 10),
            record("glenn", AgentRole::Malicious, Vote::Candidate(c[0].clone()), 10),
            record("v", AgentRole::Voter, Vote::Candidate(c[1].clone()), 2),
        ];
        let d = vote_share(&rs, &c, ShareFilter::default());
        assert_eq!((d[&c[0]], d[&c[1]]), (0.5, 0.5));
        let voters_only = ShareFilter { exclude_candidates: true, include_malicious: false };
        assert_eq!(vote_share(&rs, &c, voters_only)[&c[1]], 1.0);
        let all = ShareFilter { exclude_candidates: false, include_malicious: true };
        assert_eq!(mean_favorability(&rs, &c, all)[&c[0]], Some(22.0 / 3.0));
        assert_eq!(vote_share(&[], &c, all)[UNDECIDED], 1.0);
    }

    #[test]
    fn empty_episode_has_zero_activity() {
        let snap = aggregate(&[], 3, &cands(), ShareFilter::default(), &PlatformState::new(), vec![]);
        assert!(snap.activity_counts.values().all(|n| *n == 0));
        assert_eq!(snap.activity_counts.len(), EventKind::ALL.len());
        assert!(snap.candidate_mentions.values().all(|n| *n == 0));
    }

    proptest! {
        #[test]
        fn favorability_parser_is_total_and_bounded(text in ".*") {
            if let Some(v) = parse_favorability(&text) {
                prop_assert!((1..=10).contains(&v));
            }
        }

        #[test]
        fn shares_sum_to_one(votes in prop::collection::vec((0usize..3, 0usize..3), 0..60)) {
            let c = cands();
            let roles = [AgentRole::Voter, AgentRole::Candidate, AgentRole::Malicious];
            let rs: Vec<SurveyRecord> = votes
                .iter()
                .enumerate()
                .map(|(i, (v, r))| {
                    let vote = c.get(*v).cloned().map_or(Vote::Undecided, Vote::Candidate);
                    record(&i.to_string(), roles[*r], vote, 5)
                })
                .collect();
            for filter in [ShareFilter::default(), ShareFilter { exclude_candidates: false, include_malicious: false }] {
                let total: f64 = vote_share(&rs, &c, filter).values().sum();
                prop_assert!((total - 1.0).abs() <= 1e-9);
            }
        }
    }
}
