//! Mastodon-compatible platform layer.
//!
//! [`Platform`] is the single client abstraction. [`Emulator`] implements it
//! in process; [`MastodonClient`] maps it onto the Mastodon v1 REST API. Both
//! keep a [`PlatformState`], the fold of an append-only [`PlatformEvent`]
//! log, so the log alone reproduces accounts, toots and the follow graph.

pub mod contract;
mod emulator;
mod graph;
mod rest;
mod setup;
mod state;

use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emulator::Emulator;
pub use graph::{init_follow_graph, sample_graph_stats, FollowGraph, GraphStats, PairCounts};
pub use rest::MastodonClient;
pub use setup::{bio_for, post_introductions, provision_accounts, username_for, INTRO_CHARS};
pub use state::{read_event_log, write_event_log, PlatformState};

pub const MAX_TOOT_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TootId(pub String);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for TootId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<&str> for TootId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub username: String,
    pub display_name: String,
    pub bio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toot {
    pub id: TootId,
    pub author: AccountId,
    /// Empty for boosts.
    pub text: String,
    pub created_at: NaiveDateTime,
    pub in_reply_to: Option<TootId>,
    pub mentions: Vec<AccountId>,
    pub boost_of: Option<TootId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Toot,
    Reply,
    Boost,
    Favorite,
    Follow,
    Unfollow,
    Block,
    Unblock,
    ProfileUpdate,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Toot,
        EventKind::Reply,
        EventKind::Boost,
        EventKind::Favorite,
        EventKind::Follow,
        EventKind::Unfollow,
        EventKind::Block,
        EventKind::Unblock,
        EventKind::ProfileUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Toot => "toot",
            EventKind::Reply => "reply",
            EventKind::Boost => "boost",
            EventKind::Favorite => "favorite",
            EventKind::Follow => "follow",
            EventKind::Unfollow => "unfollow",
            EventKind::Block => "block",
            EventKind::Unblock => "unblock",
            EventKind::ProfileUpdate => "profile_update",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPayload {
    Toot { toot_id: TootId, text: String, mentions: Vec<AccountId> },
    Reply { toot_id: TootId, parent: TootId, text: String, mentions: Vec<AccountId> },
    Boost { toot_id: TootId, target: TootId },
    Favorite { target: TootId },
    Follow { target: AccountId },
    Unfollow { target: AccountId },
    Block { target: AccountId },
    Unblock { target: AccountId },
    /// Creates the account on first sight of `actor`.
    ProfileUpdate { username: String, display_name: String, bio: String },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::Toot { .. } => EventKind::Toot,
            EventPayload::Reply { .. } => EventKind::Reply,
            EventPayload::Boost { .. } => EventKind::Boost,
            EventPayload::Favorite { .. } => EventKind::Favorite,
            EventPayload::Follow { .. } => EventKind::Follow,
            EventPayload::Unfollow { .. } => EventKind::Unfollow,
            EventPayload::Block { .. } => EventKind::Block,
            EventPayload::Unblock { .. } => EventKind::Unblock,
            EventPayload::ProfileUpdate { .. } => EventKind::ProfileUpdate,
        }
    }
}

/// One platform mutation. Serialized one per line with fields in the order
/// `seq, episode, created_at, actor, kind, payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformEvent {
    pub seq: u64,
    /// `-1` for setup before the first episode.
    pub episode: i64,
    pub created_at: NaiveDateTime,
    pub actor: AccountId,
    pub kind: EventKind,
    pub payload: EventPayload,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlatformError {
    #[error("toot has {0} characters; the limit is 500")]
    Oversize(usize),
    #[error("toot text is empty")]
    EmptyText,
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("unknown toot {0}")]
    UnknownToot(TootId),
    #[error("toot {0} is not on the timeline that was shown")]
    NotShown(TootId),
    #[error("{actor} cannot interact with {other}: a block is in place")]
    Blocked { actor: AccountId, other: AccountId },
    #[error("{0} cannot target itself")]
    SelfTarget(AccountId),
    #[error("no blank account left to provision `{0}`")]
    NoBlankAccount(String),
    #[error("event log: {0}")]
    Log(String),
    #[error("server: {0}")]
    Remote(String),
    #[error("unsupported by this platform: {0}")]
    Unsupported(String),
}

/// Black-box contract satisfied by the emulator and the REST client.
///
/// Repeated follow, unfollow, block, unblock and favorite calls are no-ops.
/// Blocking removes follow edges in both directions and hides each party's
/// toots from the other.
pub trait Platform {
    /// Binds a (new or existing) account to `username` and sets its profile.
    fn provision_account(
        &mut self,
        username: &str,
        display_name: &str,
        bio: &str,
    ) -> Result<AccountId, PlatformError>;
    fn post_toot(&mut self, actor: &AccountId, text: &str) -> Result<Toot, PlatformError>;
    fn reply(&mut self, actor: &AccountId, parent: &TootId, text: &str) -> Result<Toot, PlatformError>;
    fn boost(&mut self, actor: &AccountId, toot: &TootId) -> Result<Toot, PlatformError>;
    fn favorite(&mut self, actor: &AccountId, toot: &TootId) -> Result<(), PlatformError>;
    fn follow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError>;
    fn unfollow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError>;
    fn block(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError>;
    fn unblock(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError>;
    fn update_profile(&mut self, actor: &AccountId, bio: &str) -> Result<(), PlatformError>;

    /// Toots and boosts by followed accounts, newest first.
    fn home_timeline(&self, actor: &AccountId, limit: usize) -> Result<Vec<Toot>, PlatformError>;
    fn get_toot(&self, id: &TootId) -> Result<Toot, PlatformError>;

    /// Sets the simulated clock used to stamp subsequent events.
    fn set_clock(&mut self, episode: i64, now: NaiveDateTime);

    /// Local fold of every event this client has applied.
    fn state(&self) -> &PlatformState;

    /// Recorded in run manifests.
    fn identity(&self) -> String;
}

/// Account ids mentioned as `@username` in `text`, in order of appearance.
pub fn extract_mentions(text: &str, state: &PlatformState) -> Vec<AccountId> {
    let mut out: Vec<AccountId> = Vec::new();
    for word in text.split_whitespace() {
        let Some(handle) = word.strip_prefix('@') else { continue };
        let handle: String = handle
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        if let Some(account) = state.account_by_username(&handle) {
            if !out.contains(&account.id) {
                out.push(account.id.clone());
            }
        }
    }
    out
}

pub(crate) fn check_text(text: &str) -> Result<(), PlatformError> {
    let len = text.chars().count();
    if len > MAX_TOOT_CHARS {
        return Err(PlatformError::Oversize(len));
    }
    if text.trim().is_empty() {
        return Err(PlatformError::EmptyText);
    }
    Ok(())
}
