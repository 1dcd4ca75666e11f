use std::fmt;

use chrono::NaiveDateTime;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::memory::{MemoryTag, RetrievalWeights};
use super::{
    current_opinion_on_candidate, opinion_on_candidate, plan_malicious, plan_public_perception,
    prompts, AgentError, AgentState,
};
use crate::llm::{truncate_chars, LlmBackend, PromptKind};
use crate::platform::{Platform, PlatformError, PlatformState, Toot, TootId, MAX_TOOT_CHARS};
use crate::scenario::AgentRole;

const APP_ACTION_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Post,
    Reply,
    Boost,
    Favorite,
    Follow,
    Unfollow,
    Block,
    Unblock,
    UpdateProfile,
    DoNothing,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::Post,
        ActionKind::Reply,
        ActionKind::Boost,
        ActionKind::Favorite,
        ActionKind::Follow,
        ActionKind::Unfollow,
        ActionKind::Block,
        ActionKind::Unblock,
        ActionKind::UpdateProfile,
        ActionKind::DoNothing,
    ];

    pub fn verb(self) -> &'static str {
        match self {
            ActionKind::Post => "post",
            ActionKind::Reply => "reply",
            ActionKind::Boost => "boost",
            ActionKind::Favorite => "favorite",
            ActionKind::Follow => "follow",
            ActionKind::Unfollow => "unfollow",
            ActionKind::Block => "block",
            ActionKind::Unblock => "unblock",
            ActionKind::UpdateProfile => "update_profile",
            ActionKind::DoNothing => "do_nothing",
        }
    }

    fn from_verb(verb: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.verb() == verb)
    }
}

/// One operation chosen in an app session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AppAction {
    Post { text: String },
    Reply { toot: TootId, text: String },
    Boost { toot: TootId },
    Favorite { toot: TootId },
    Follow { username: String },
    Unfollow { username: String },
    Block { username: String },
    Unblock { username: String },
    UpdateProfile { bio: String },
    DoNothing,
}

impl AppAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            AppAction::Post { .. } => ActionKind::Post,
            AppAction::Reply { .. } => ActionKind::Reply,
            AppAction::Boost { .. } => ActionKind::Boost,
            AppAction::Favorite { .. } => ActionKind::Favorite,
            AppAction::Follow { .. } => ActionKind::Follow,
            AppAction::Unfollow { .. } => ActionKind::Unfollow,
            AppAction::Block { .. } => ActionKind::Block,
            AppAction::Unblock { .. } => ActionKind::Unblock,
            AppAction::UpdateProfile { .. } => ActionKind::UpdateProfile,
            AppAction::DoNothing => ActionKind::DoNothing,
        }
    }
}

/// The line this action is written as in the app prompt's grammar.
impl fmt::Display for AppAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = self.kind().verb();
        match self {
            AppAction::Post { text } => write!(f, "{verb}: {text}"),
            AppAction::Reply { toot, text } => write!(f, "{verb}: {toot} {text}"),
            AppAction::Boost { toot } | AppAction::Favorite { toot } => write!(f, "{verb}: {toot}"),
            AppAction::Follow { username }
            | AppAction::Unfollow { username }
            | AppAction::Block { username }
            | AppAction::Unblock { username } => write!(f, "{verb}: @{username}"),
            AppAction::UpdateProfile { bio } => write!(f, "{verb}: {bio}"),
            AppAction::DoNothing => write!(f, "{verb}:"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no action lines found")]
    NoActions,
    #[error("malformed `{verb}` line `{line}`: {reason}")]
    Malformed { verb: &'static str, line: String, reason: &'static str },
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

fn toot_ref(token: &str) -> Option<TootId> {
    let id = token.trim_matches(|c| c == '[' || c == ']' || c == '#' || c == ',');
    (!id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric())).then(|| TootId(id.to_string()))
}

fn handle(token: &str) -> Option<String> {
    let name = token.trim().trim_start_matches('@');
    let name = name.split('@').next().unwrap_or("");
    let name = name.trim_end_matches(['.', ',', '!', '?']);
    (!name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
        .then(|| name.to_string())
}

/// Parses the app-session answer: one `verb: argument` line per action.
///
/// Lines that do not start with a known verb are ignored; a known verb with
/// an unusable argument is an error. At most `max_actions` are returned.
pub fn parse_actions(text: &str, max_actions: usize) -> Result<Vec<AppAction>, ParseError> {
    let mut actions = Vec::new();
    for raw in text.lines() {
        let line = strip_bullet(raw);
        let (verb, arg) = match line.split_once(':') {
            Some((v, a)) => (v.trim().to_ascii_lowercase(), a.trim()),
            None => (line.trim().to_ascii_lowercase(), ""),
        };
        let Some(kind) = ActionKind::from_verb(&verb) else { continue };
        let bad = |reason| ParseError::Malformed { verb: kind.verb(), line: line.to_string(), reason };
        let action = match kind {
            ActionKind::Post => {
                if arg.is_empty() {
                    return Err(bad("empty text"));
                }
                AppAction::Post { text: arg.to_string() }
            }
            ActionKind::Reply => {
                let (id, body) = arg.split_once(char::is_whitespace).ok_or_else(|| bad("expected `<toot id> <text>`"))?;
                let toot = toot_ref(id).ok_or_else(|| bad("bad toot id"))?;
                let body = body.trim();
                if body.is_empty() {
                    return Err(bad("empty text"));
                }
                AppAction::Reply { toot, text: body.to_string() }
            }
            ActionKind::Boost | ActionKind::Favorite => {
                let toot = arg.split_whitespace().next().and_then(toot_ref).ok_or_else(|| bad("bad toot id"))?;
                if kind == ActionKind::Boost {
                    AppAction::Boost { toot }
                } else {
                    AppAction::Favorite { toot }
                }
            }
            ActionKind::Follow | ActionKind::Unfollow | ActionKind::Block | ActionKind::Unblock => {
                let username = arg.split_whitespace().next().and_then(handle).ok_or_else(|| bad("bad @username"))?;
                match kind {
                    ActionKind::Follow => AppAction::Follow { username },
                    ActionKind::Unfollow => AppAction::Unfollow { username },
                    ActionKind::Block => AppAction::Block { username },
                    _ => AppAction::Unblock { username },
                }
            }
            ActionKind::UpdateProfile => {
                if arg.is_empty() {
                    return Err(bad("empty bio"));
                }
                AppAction::UpdateProfile { bio: arg.to_string() }
            }
            ActionKind::DoNothing => AppAction::DoNothing,
        };
        actions.push(action);
        if actions.len() == max_actions {
            break;
        }
    }
    if actions.is_empty() {
        Err(ParseError::NoActions)
    } else {
        Ok(actions)
    }
}

fn handle_of(state: &PlatformState, toot: &Toot) -> String {
    state.account(&toot.author).map_or_else(|| toot.author.to_string(), |a| a.username.clone())
}

/// Timeline as shown in the app prompt, one toot per line with its id.
pub fn render_feed(feed: &[Toot], state: &PlatformState) -> String {
    if feed.is_empty() {
        return "(the timeline is empty)".to_string();
    }
    feed.iter()
        .map(|t| {
            let who = handle_of(state, t);
            let when = t.created_at.format("%H:%M");
            match &t.boost_of {
                Some(orig) => {
                    let original = state.toot(orig);
                    let (author, text) = original.map_or(("?".to_string(), ""), |o| (handle_of(state, o), o.text.as_str()));
                    format!("[{}] {when} @{who} boosted @{author}: {text}", t.id)
                }
                None => match &t.in_reply_to {
                    Some(parent) => format!("[{}] {when} @{who} (replying to [{parent}]): {}", t.id, t.text),
                    None => format!("[{}] {when} @{who}: {}", t.id, t.text),
                },
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inputs shared by every session in an episode.
#[derive(Debug, Clone)]
pub struct SessionContext {
    pub now: NaiveDateTime,
    /// `(name, proposal)` of every candidate.
    pub candidates: Vec<(String, String)>,
    /// Candidate a malicious agent promotes.
    pub favored: Option<String>,
    /// Platform usage instructions, rendered.
    pub usage: String,
    pub feed_window: usize,
    pub max_actions: usize,
    pub retrieval_k: usize,
    pub weights: RetrievalWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub actions: Vec<AppAction>,
    /// True when both parse attempts failed and the agent did nothing.
    pub fell_back: bool,
}

fn joined_others(all: &[(String, String)], me: &str) -> String {
    all.iter().map(|(n, _)| n.as_str()).filter(|n| *n != me).collect::<Vec<_>>().join(" and ")
}

/// Perceive and decide: records the timeline as observations, runs the
/// role's components, then asks for app actions.
///
/// Touches only the agent's own state, so sessions of different agents can
/// run concurrently against one platform snapshot.
pub fn decide_session(
    agent: &mut AgentState,
    ctx: &SessionContext,
    feed: &[Toot],
    state: &PlatformState,
    llm: &dyn LlmBackend,
) -> Result<SessionPlan, AgentError> {
    let time = ctx.now.format("%A %B %-d, %Y, %H:%M").to_string();
    for toot in feed.iter().rev() {
        let line = render_feed(std::slice::from_ref(toot), state);
        agent.remember(ctx.now, format!("{time}: {} read on Mastodon {line}", agent.name()), MemoryTag::Observation)?;
    }

    let mut context = Vec::new();
    match agent.role() {
        AgentRole::Voter => {
            for (candidate, proposal) in &ctx.candidates {
                let opinion = opinion_on_candidate(agent, candidate, proposal, ctx.retrieval_k, ctx.weights, llm)?;
                let current = current_opinion_on_candidate(agent, candidate, &opinion, ctx.feed_window, llm)?;
                context.push(format!("{}'s current opinion of {candidate}: {current}", agent.name()));
            }
        }
        AgentRole::Candidate => {
            let opponent = joined_others(&ctx.candidates, agent.name());
            let plan = plan_public_perception(agent, &opponent, ctx.retrieval_k, ctx.weights, llm)?;
            context.push(format!("{}'s plan: {plan}", agent.name()));
            agent.remember(ctx.now, format!("{time}: {}'s plan: {plan}", agent.name()), MemoryTag::Plan)?;
        }
        AgentRole::Malicious => {
            let favored = ctx
                .favored
                .clone()
                .or_else(|| ctx.candidates.first().map(|(n, _)| n.clone()))
                .unwrap_or_default();
            let opponent = joined_others(&ctx.candidates, &favored);
            let plan = plan_malicious(agent, &favored, &opponent, ctx.retrieval_k, ctx.weights, llm)?;
            context.push(format!("{}'s strategy: {plan}", agent.name()));
            agent.remember(ctx.now, format!("{time}: {}'s strategy: {plan}", agent.name()), MemoryTag::Plan)?;
        }
    }

    let accounts = state
        .accounts()
        .iter()
        .filter(|a| a.id != agent.account)
        .map(|a| format!("@{} ({})", a.username, a.display_name))
        .collect::<Vec<_>>()
        .join(", ");
    let context = if ctx.usage.is_empty() {
        context.join("\n")
    } else {
        format!("{}\n\n{}", ctx.usage, context.join("\n"))
    };
    let prompt = prompts::fill(
        prompts::APP_ACTION,
        &[
            ("persona", &agent.persona),
            ("context", &context),
            ("time", &time),
            ("name", agent.name()),
            ("feed", &render_feed(feed, state)),
            ("accounts", &accounts),
            ("max_actions", &ctx.max_actions.to_string()),
        ],
    );

    let first = agent.ask(PromptKind::AppAction, prompt.clone(), APP_ACTION_CHARS, llm)?;
    let err = match parse_actions(&first, ctx.max_actions) {
        Ok(actions) => return Ok(SessionPlan { actions, fell_back: false }),
        Err(e) => e,
    };
    debug!("{}: unparseable app answer ({err}); retrying", agent.name());
    let retry = format!(
        "{prompt}\n\nThe previous answer could not be used ({err}). Answer again with action lines only."
    );
    let second = agent.ask(PromptKind::AppAction, retry, APP_ACTION_CHARS, llm)?;
    match parse_actions(&second, ctx.max_actions) {
        Ok(actions) => Ok(SessionPlan { actions, fell_back: false }),
        Err(e) => {
            warn!("{}: app answer unparseable twice ({e}); doing nothing", agent.name());
            Ok(SessionPlan { actions: vec![AppAction::DoNothing], fell_back: true })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub action: AppAction,
    pub error: Option<String>,
    /// The text was cut to the toot limit before posting.
    pub truncated: bool,
}

fn with_truncation<T>(
    text: &str,
    mut attempt: impl FnMut(&str) -> Result<T, PlatformError>,
) -> (Result<T, PlatformError>, bool) {
    match attempt(text) {
        Err(PlatformError::Oversize(_)) => (attempt(&truncate_chars(text, MAX_TOOT_CHARS)), true),
        other => (other, false),
    }
}

/// Effect phase: performs the actions in order and records each result,
/// success or failure, as a memory. Platform errors never abort the session.
pub fn apply_actions(
    platform: &mut dyn Platform,
    agent: &mut AgentState,
    actions: &[AppAction],
    feed: &[Toot],
    now: NaiveDateTime,
) -> Result<Vec<ActionOutcome>, AgentError> {
    let me = agent.account.clone();
    let name = agent.name().to_string();
    let mut outcomes = Vec::with_capacity(actions.len());
    for action in actions {
        let mut truncated = false;
        let resolve = |platform: &dyn Platform, username: &str| {
            platform
                .state()
                .account_by_username(username)
                .map(|a| a.id.clone())
                .ok_or_else(|| PlatformError::Remote(format!("no account named @{username}")))
        };
        // Toots can only be acted on if the agent was shown them.
        let visible = |toot: &TootId| {
            if feed.iter().any(|t| t.id == *toot) {
                Ok(())
            } else {
                Err(PlatformError::NotShown(toot.clone()))
            }
        };
        let result: Result<String, PlatformError> = match action {
            AppAction::Post { text } => {
                let (r, t) = with_truncation(text, |s| platform.post_toot(&me, s));
                truncated = t;
                r.map(|toot| format!("{name} posted on Mastodon: {}", toot.text))
            }
            AppAction::Reply { toot, text } => {
                let (r, t) = match visible(toot) {
                    Ok(()) => with_truncation(text, |s| platform.reply(&me, toot, s)),
                    Err(e) => (Err(e), false),
                };
                truncated = t;
                r.map(|reply| format!("{name} replied to toot {toot} on Mastodon: {}", reply.text))
            }
            AppAction::Boost { toot } => visible(toot)
                .and_then(|()| platform.boost(&me, toot))
                .map(|_| format!("{name} boosted toot {toot}")),
            AppAction::Favorite { toot } => visible(toot)
                .and_then(|()| platform.favorite(&me, toot))
                .map(|_| format!("{name} favorited toot {toot}")),
            AppAction::Follow { username } => resolve(platform, username)
                .and_then(|id| platform.follow(&me, &id))
                .map(|_| format!("{name} followed @{username}")),
            AppAction::Unfollow { username } => resolve(platform, username)
                .and_then(|id| platform.unfollow(&me, &id))
                .map(|_| format!("{name} unfollowed @{username}")),
            AppAction::Block { username } => resolve(platform, username)
                .and_then(|id| platform.block(&me, &id))
                .map(|_| format!("{name} blocked @{username}")),
            AppAction::Unblock { username } => resolve(platform, username)
                .and_then(|id| platform.unblock(&me, &id))
                .map(|_| format!("{name} unblocked @{username}")),
            AppAction::UpdateProfile { bio } => {
                let (r, t) = with_truncation(bio, |s| platform.update_profile(&me, s));
                truncated = t;
                r.map(|_| format!("{name} updated their Mastodon bio"))
            }
            AppAction::DoNothing => Ok(format!("{name} looked at Mastodon and did nothing")),
        };
        let (memory, error) = match result {
            Ok(text) => (text, None),
            Err(e) => {
                debug!("{name}: `{action}` failed: {e}");
                (format!("{name} tried to {} on Mastodon but it failed: {e}", action.kind().verb()), Some(e.to_string()))
            }
        };
        agent.remember(now, memory, MemoryTag::Platform)?;
        outcomes.push(ActionOutcome { action: action.clone(), error, truncated });
    }
    Ok(outcomes)
}
