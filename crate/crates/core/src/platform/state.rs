use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::{
    Account, AccountId, EventKind, EventPayload, PlatformError, PlatformEvent, Toot, TootId,
};

/// Platform state as the fold of its event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlatformState {
    accounts: Vec<Account>,
    account_index: BTreeMap<AccountId, usize>,
    toots: Vec<Toot>,
    toot_index: BTreeMap<TootId, usize>,
    follows: BTreeSet<(AccountId, AccountId)>,
    blocks: BTreeSet<(AccountId, AccountId)>,
    favorites: BTreeSet<(AccountId, TootId)>,
    events: Vec<PlatformEvent>,
}

impl PlatformState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds state from a log; fails on the first inconsistent event.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a PlatformEvent>) -> Result<Self, PlatformError> {
        let mut state = Self::new();
        for event in events {
            state.apply(event.clone())?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, event: PlatformEvent) -> Result<(), PlatformError> {
        let log_err = |msg: String| Err(PlatformError::Log(msg));
        if event.seq != self.events.len() as u64 {
            return log_err(format!("expected seq {}, got {}", self.events.len(), event.seq));
        }
        if event.kind != event.payload.kind() {
            return log_err(format!("event {} kind {:?} disagrees with payload", event.seq, event.kind));
        }
        if let Some(last) = self.events.last() {
            if event.episode < last.episode {
                return log_err(format!("event {} goes back to episode {}", event.seq, event.episode));
            }
        }
        let actor = event.actor.clone();
        if !matches!(event.payload, EventPayload::ProfileUpdate { .. }) {
            self.require_account(&actor)?;
        }
        match &event.payload {
            EventPayload::Toot { toot_id, text, mentions } => {
                self.insert_toot(Toot {
                    id: toot_id.clone(),
                    author: actor,
                    text: text.clone(),
                    created_at: event.created_at,
                    in_reply_to: None,
                    mentions: mentions.clone(),
                    boost_of: None,
                })?;
            }
            EventPayload::Reply { toot_id, parent, text, mentions } => {
                self.require_toot(parent)?;
                self.insert_toot(Toot {
                    id: toot_id.clone(),
                    author: actor,
                    text: text.clone(),
                    created_at: event.created_at,
                    in_reply_to: Some(parent.clone()),
                    mentions: mentions.clone(),
                    boost_of: None,
                })?;
            }
            EventPayload::Boost { toot_id, target } => {
                self.require_toot(target)?;
                self.insert_toot(Toot {
                    id: toot_id.clone(),
                    author: actor,
                    text: String::new(),
                    created_at: event.created_at,
                    in_reply_to: None,
                    mentions: Vec::new(),
                    boost_of: Some(target.clone()),
                })?;
            }
            EventPayload::Favorite { target } => {
                self.require_toot(target)?;
                self.favorites.insert((actor, target.clone()));
            }
            EventPayload::Follow { target } => {
                self.require_account(target)?;
                if *target == actor {
                    return Err(PlatformError::SelfTarget(actor));
                }
                self.follows.insert((actor, target.clone()));
            }
            EventPayload::Unfollow { target } => {
                self.require_account(target)?;
                self.follows.remove(&(actor, target.clone()));
            }
            EventPayload::Block { target } => {
                self.require_account(target)?;
                if *target == actor {
                    return Err(PlatformError::SelfTarget(actor));
                }
                self.follows.remove(&(actor.clone(), target.clone()));
                self.follows.remove(&(target.clone(), actor.clone()));
                self.blocks.insert((actor, target.clone()));
            }
            EventPayload::Unblock { target } => {
                self.require_account(target)?;
                self.blocks.remove(&(actor, target.clone()));
            }
            EventPayload::ProfileUpdate { username, display_name, bio } => {
                match self.account_index.get(&actor) {
                    Some(&i) => {
                        let account = &mut self.accounts[i];
                        account.display_name = display_name.clone();
                        account.bio = bio.clone();
                    }
                    None => {
                        if self.account_by_username(username).is_some() {
                            return log_err(format!("username `{username}` is already taken"));
                        }
                        self.account_index.insert(actor.clone(), self.accounts.len());
                        self.accounts.push(Account {
                            id: actor,
                            username: username.clone(),
                            display_name: display_name.clone(),
                            bio: bio.clone(),
                        });
                    }
                }
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn insert_toot(&mut self, toot: Toot) -> Result<(), PlatformError> {
        if self.toot_index.contains_key(&toot.id) {
            return Err(PlatformError::Log(format!("duplicate toot id {}", toot.id)));
        }
        self.toot_index.insert(toot.id.clone(), self.toots.len());
        self.toots.push(toot);
        Ok(())
    }

    pub fn require_account(&self, id: &AccountId) -> Result<&Account, PlatformError> {
        self.account(id).ok_or_else(|| PlatformError::UnknownAccount(id.clone()))
    }

    pub fn require_toot(&self, id: &TootId) -> Result<&Toot, PlatformError> {
        self.toot(id).ok_or_else(|| PlatformError::UnknownToot(id.clone()))
    }

    /// Errors when a block exists between the two accounts in either direction.
    pub fn require_no_block(&self, actor: &AccountId, other: &AccountId) -> Result<(), PlatformError> {
        if self.blocked_between(actor, other) {
            Err(PlatformError::Blocked { actor: actor.clone(), other: other.clone() })
        } else {
            Ok(())
        }
    }

    pub fn account(&self, id: &AccountId) -> Option<&Account> {
        self.account_index.get(id).map(|&i| &self.accounts[i])
    }

    pub fn account_by_username(&self, username: &str) -> Option<&Account> {
        self.accounts.iter().find(|a| a.username.eq_ignore_ascii_case(username))
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn toot(&self, id: &TootId) -> Option<&Toot> {
        self.toot_index.get(id).map(|&i| &self.toots[i])
    }

    pub fn toots(&self) -> &[Toot] {
        &self.toots
    }

    pub fn events(&self) -> &[PlatformEvent] {
        &self.events
    }

    pub fn is_following(&self, follower: &AccountId, followee: &AccountId) -> bool {
        self.follows.contains(&(follower.clone(), followee.clone()))
    }

    pub fn has_blocked(&self, blocker: &AccountId, blocked: &AccountId) -> bool {
        self.blocks.contains(&(blocker.clone(), blocked.clone()))
    }

    pub fn blocked_between(&self, a: &AccountId, b: &AccountId) -> bool {
        self.has_blocked(a, b) || self.has_blocked(b, a)
    }

    pub fn has_favorited(&self, actor: &AccountId, toot: &TootId) -> bool {
        self.favorites.contains(&(actor.clone(), toot.clone()))
    }

    pub fn follow_edges(&self) -> &BTreeSet<(AccountId, AccountId)> {
        &self.follows
    }

    pub fn followers_of(&self, id: &AccountId) -> usize {
        self.follows.iter().filter(|(_, b)| b == id).count()
    }

    /// The account whose words a toot carries: the original author for boosts.
    pub fn original_author<'a>(&'a self, toot: &'a Toot) -> &'a AccountId {
        toot.boost_of
            .as_ref()
            .and_then(|id| self.toot(id))
            .map_or(&toot.author, |t| &t.author)
    }

    /// Toots and boosts by accounts `viewer` follows, newest first, hiding
    /// anything whose author or boosted author shares a block with `viewer`.
    pub fn home_timeline(&self, viewer: &AccountId, limit: usize) -> Vec<Toot> {
        let mut visible: Vec<(usize, &Toot)> = self
            .toots
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                self.is_following(viewer, &t.author)
                    && !self.blocked_between(viewer, &t.author)
                    && !self.blocked_between(viewer, self.original_author(t))
            })
            .collect();
        visible.sort_by(|(ia, a), (ib, b)| b.created_at.cmp(&a.created_at).then(ib.cmp(ia)));
        visible.into_iter().take(limit).map(|(_, t)| t.clone()).collect()
    }

    /// Events of the given episode.
    pub fn events_in_episode(&self, episode: i64) -> impl Iterator<Item = &PlatformEvent> {
        self.events.iter().filter(move |e| e.episode == episode)
    }

    pub fn count_kind(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

pub fn write_event_log(path: impl AsRef<Path>, events: &[PlatformEvent]) -> std::io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<PlatformEvent>, PlatformError> {
    let file = std::fs::File::open(path).map_err(|e| PlatformError::Log(e.to_string()))?;
    std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| PlatformError::Log(e.to_string()))?;
            serde_json::from_str(&line).map_err(|e| PlatformError::Log(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
