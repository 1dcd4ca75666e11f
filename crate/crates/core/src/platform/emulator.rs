use chrono::NaiveDateTime;

use super::{
    check_text, extract_mentions, AccountId, EventPayload, Platform, PlatformError,
    PlatformEvent, PlatformState, Toot, TootId,
};

/// In-process Mastodon stand-in. Every mutation goes through
/// [`PlatformState::apply`], so the event log is the only source of truth.
#[derive(Debug, Clone)]
pub struct Emulator {
    state: PlatformState,
    episode: i64,
    now: NaiveDateTime,
}

impl Default for Emulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Emulator {
    pub fn new() -> Self {
        Self {
            state: PlatformState::new(),
            episode: -1,
            now: NaiveDateTime::default(),
        }
    }

    /// Rebuilds an emulator from a saved log; the clock resumes at the last
    /// event.
    pub fn from_events(events: &[PlatformEvent]) -> Result<Self, PlatformError> {
        let state = PlatformState::replay(events)?;
        let (episode, now) = events
            .last()
            .map_or((-1, NaiveDateTime::default()), |e| (e.episode, e.created_at));
        Ok(Self { state, episode, now })
    }

    pub fn episode(&self) -> i64 {
        self.episode
    }

    fn emit(&mut self, actor: &AccountId, payload: EventPayload) -> Result<(), PlatformError> {
        let event = PlatformEvent {
            seq: self.state.events().len() as u64,
            episode: self.episode,
            created_at: self.now,
            actor: actor.clone(),
            kind: payload.kind(),
            payload,
        };
        self.state.apply(event)
    }

    fn next_toot_id(&self) -> TootId {
        TootId((self.state.toots().len() + 1).to_string())
    }

    fn last_toot(&self) -> Toot {
        self.state.toots().last().cloned().expect("a toot was just inserted")
    }

    fn check_pair(&self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.state.require_account(actor)?;
        self.state.require_account(target)?;
        if actor == target {
            return Err(PlatformError::SelfTarget(actor.clone()));
        }
        Ok(())
    }
}

impl Platform for Emulator {
    fn provision_account(
        &mut self,
        username: &str,
        display_name: &str,
        bio: &str,
    ) -> Result<AccountId, PlatformError> {
        let existing = self.state.account_by_username(username).cloned();
        let id = match &existing {
            Some(account) if account.display_name == display_name && account.bio == bio => {
                return Ok(account.id.clone())
            }
            Some(account) => account.id.clone(),
            None => AccountId((self.state.accounts().len() + 1).to_string()),
        };
        let username = existing.map_or_else(|| username.to_string(), |a| a.username);
        self.emit(
            &id,
            EventPayload::ProfileUpdate {
                username,
                display_name: display_name.to_string(),
                bio: bio.to_string(),
            },
        )?;
        Ok(id)
    }

    fn post_toot(&mut self, actor: &AccountId, text: &str) -> Result<Toot, PlatformError> {
        self.state.require_account(actor)?;
        check_text(text)?;
        let mentions = extract_mentions(text, &self.state);
        let toot_id = self.next_toot_id();
        self.emit(actor, EventPayload::Toot { toot_id, text: text.to_string(), mentions })?;
        Ok(self.last_toot())
    }

    fn reply(&mut self, actor: &AccountId, parent: &TootId, text: &str) -> Result<Toot, PlatformError> {
        self.state.require_account(actor)?;
        let parent_author = self.state.require_toot(parent)?.author.clone();
        self.state.require_no_block(actor, &parent_author)?;
        check_text(text)?;
        let mentions = extract_mentions(text, &self.state);
        let toot_id = self.next_toot_id();
        self.emit(
            actor,
            EventPayload::Reply { toot_id, parent: parent.clone(), text: text.to_string(), mentions },
        )?;
        Ok(self.last_toot())
    }

    fn boost(&mut self, actor: &AccountId, toot: &TootId) -> Result<Toot, PlatformError> {
        self.state.require_account(actor)?;
        let target = self.state.require_toot(toot)?;
        let original = target.boost_of.clone().unwrap_or_else(|| toot.clone());
        let original_author = self.state.require_toot(&original)?.author.clone();
        self.state.require_no_block(actor, &original_author)?;
        self.state.require_no_block(actor, &target.author.clone())?;
        if let Some(existing) = self
            .state
            .toots()
            .iter()
            .find(|t| t.author == *actor && t.boost_of.as_ref() == Some(&original))
        {
            return Ok(existing.clone());
        }
        let toot_id = self.next_toot_id();
        self.emit(actor, EventPayload::Boost { toot_id, target: original })?;
        Ok(self.last_toot())
    }

    fn favorite(&mut self, actor: &AccountId, toot: &TootId) -> Result<(), PlatformError> {
        self.state.require_account(actor)?;
        let author = self.state.require_toot(toot)?.author.clone();
        self.state.require_no_block(actor, &author)?;
        if self.state.has_favorited(actor, toot) {
            return Ok(());
        }
        self.emit(actor, EventPayload::Favorite { target: toot.clone() })
    }

    fn follow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.check_pair(actor, target)?;
        self.state.require_no_block(actor, target)?;
        if self.state.is_following(actor, target) {
            return Ok(());
        }
        self.emit(actor, EventPayload::Follow { target: target.clone() })
    }

    fn unfollow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.check_pair(actor, target)?;
        if !self.state.is_following(actor, target) {
            return Ok(());
        }
        self.emit(actor, EventPayload::Unfollow { target: target.clone() })
    }

    fn block(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.check_pair(actor, target)?;
        if self.state.has_blocked(actor, target) {
            return Ok(());
        }
        self.emit(actor, EventPayload::Block { target: target.clone() })
    }

    fn unblock(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.check_pair(actor, target)?;
        if !self.state.has_blocked(actor, target) {
            return Ok(());
        }
        self.emit(actor, EventPayload::Unblock { target: target.clone() })
    }

    fn update_profile(&mut self, actor: &AccountId, bio: &str) -> Result<(), PlatformError> {
        let account = self.state.require_account(actor)?.clone();
        let len = bio.chars().count();
        if len > super::MAX_TOOT_CHARS {
            return Err(PlatformError::Oversize(len));
        }
        self.emit(
            actor,
            EventPayload::ProfileUpdate {
                username: account.username,
                display_name: account.display_name,
                bio: bio.to_string(),
            },
        )
    }

    fn home_timeline(&self, actor: &AccountId, limit: usize) -> Result<Vec<Toot>, PlatformError> {
        self.state.require_account(actor)?;
        Ok(self.state.home_timeline(actor, limit))
    }

    fn get_toot(&self, id: &TootId) -> Result<Toot, PlatformError> {
        self.state.require_toot(id).cloned()
    }

    fn set_clock(&mut self, episode: i64, now: NaiveDateTime) {
        self.episode = episode;
        self.now = now;
    }

    fn state(&self) -> &PlatformState {
        &self.state
    }

    fn identity(&self) -> String {
        "emulator".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::{EventKind, MAX_TOOT_CHARS};

    fn setup() -> (Emulator, AccountId, AccountId, AccountId) {
        let mut emu = Emulator::new();
        let a = emu.provision_account("alice", "Alice", "bio a").unwrap();
        let b = emu.provision_account("bob", "Bob", "bio b").unwrap();
        let c = emu.provision_account("carol", "Carol", "bio c").unwrap();
        (emu, a, b, c)
    }

    #[test]
    fn mentions_resolve_to_known_accounts() {
        let (mut emu, a, b, _) = setup();
        let t = emu.post_toot(&a, "hi @bob and @nobody, @bob again").unwrap();
        assert_eq!(t.mentions, vec![b]);
    }

    #[test]
    fn boost_of_boost_targets_original() {
        let (mut emu, a, b, c) = setup();
        let t = emu.post_toot(&a, "original").unwrap();
        let b1 = emu.boost(&b, &t.id).unwrap();
        let b2 = emu.boost(&c, &b1.id).unwrap();
        assert_eq!(b2.boost_of, Some(t.id.clone()));
        // Boosting again returns the existing boost.
        assert_eq!(emu.boost(&c, &t.id).unwrap(), b2);
        assert_eq!(emu.state().count_kind(EventKind::Boost), 2);
    }

    #[test]
    fn reprovision_is_idempotent() {
        let (mut emu, a, _, _) = setup();
        let events = emu.state().events().len();
        assert_eq!(emu.provision_account("alice", "Alice", "bio a").unwrap(), a);
        assert_eq!(emu.state().events().len(), events);
        assert_eq!(emu.state().accounts().len(), 3);
    }

    #[test]
    fn exact_limit_is_accepted() {
        let (mut emu, a, _, _) = setup();
        assert!(emu.post_toot(&a, &"é".repeat(MAX_TOOT_CHARS)).is_ok());
        assert_eq!(emu.post_toot(&a, &"é".repeat(MAX_TOOT_CHARS + 1)), Err(PlatformError::Oversize(501)));
        assert_eq!(emu.post_toot(&a, "   "), Err(PlatformError::EmptyText));
    }

    #[test]
    fn unknown_targets_are_errors() {
        let (mut emu, a, _, _) = setup();
        assert!(matches!(emu.follow(&a, &"99".into()), Err(PlatformError::UnknownAccount(_))));
        assert!(matches!(emu.favorite(&a, &"42".into()), Err(PlatformError::UnknownToot(_))));
        assert!(matches!(emu.reply(&a, &"42".into(), "x"), Err(PlatformError::UnknownToot(_))));
        assert!(matches!(emu.post_toot(&"99".into(), "x"), Err(PlatformError::UnknownAccount(_))));
        assert!(matches!(emu.follow(&a, &a), Err(PlatformError::SelfTarget(_))));
    }

    #[test]
    fn blocked_user_cannot_interact() {
        let (mut emu, a, b, _) = setup();
        let t = emu.post_toot(&a, "mine").unwrap();
        emu.block(&a, &b).unwrap();
        assert!(matches!(emu.favorite(&b, &t.id), Err(PlatformError::Blocked { .. })));
        assert!(matches!(emu.reply(&b, &t.id, "hey"), Err(PlatformError::Blocked { .. })));
        assert!(matches!(emu.boost(&b, &t.id), Err(PlatformError::Blocked { .. })));
        assert!(matches!(emu.follow(&b, &a), Err(PlatformError::Blocked { .. })));
        emu.unblock(&a, &b).unwrap();
        emu.follow(&b, &a).unwrap();
    }

    #[test]
    fn events_carry_clock() {
        let (mut emu, a, _, _) = setup();
        let when = NaiveDateTime::parse_from_str("2024-10-15T10:30:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        emu.set_clock(21, when);
        let t = emu.post_toot(&a, "x").unwrap();
        assert_eq!(t.created_at, when);
        let last = emu.state().events().last().unwrap();
        assert_eq!((last.episode, last.created_at), (21, when));
    }
}
