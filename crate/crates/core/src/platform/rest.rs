use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime};
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::Method;
use serde_json::{json, Value};

use super::{
    check_text, extract_mentions, AccountId, EventPayload, Platform, PlatformError,
    PlatformEvent, PlatformState, Toot, TootId, MAX_TOOT_CHARS,
};

/// [`Platform`] over the Mastodon v1 REST API.
///
/// The server is expected to host a pool of blank-slate accounts, one bearer
/// token each; [`provision_account`](Platform::provision_account) claims the
/// next unused token. Every successful mutation is mirrored into a local
/// [`PlatformState`], which also pre-validates requests so that the client
/// obeys the same contract as the emulator. Interactions with toots that
/// this client has not seen (posted or fetched) are rejected.
pub struct MastodonClient {
    base_url: String,
    http: Client,
    blank_tokens: Vec<String>,
    next_blank: usize,
    tokens: BTreeMap<AccountId, String>,
    bound: BTreeMap<String, AccountId>,
    mirror: PlatformState,
    episode: i64,
    now: NaiveDateTime,
}

impl MastodonClient {
    pub fn new(base_url: impl Into<String>, blank_tokens: Vec<String>) -> Result<Self, PlatformError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| PlatformError::Remote(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http,
            blank_tokens,
            next_blank: 0,
            tokens: BTreeMap::new(),
            bound: BTreeMap::new(),
            mirror: PlatformState::new(),
            episode: -1,
            now: NaiveDateTime::default(),
        })
    }

    /// Reads `MASTODON_BASE_URL` and the comma-separated `MASTODON_ACCESS_TOKENS`.
    pub fn from_env() -> Result<Self, PlatformError> {
        let base = std::env::var("MASTODON_BASE_URL")
            .map_err(|_| PlatformError::Remote("MASTODON_BASE_URL is not set".into()))?;
        let tokens = std::env::var("MASTODON_ACCESS_TOKENS")
            .map_err(|_| PlatformError::Remote("MASTODON_ACCESS_TOKENS is not set".into()))?;
        let tokens = tokens.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
        Self::new(base, tokens)
    }

    fn token(&self, actor: &AccountId) -> Result<&str, PlatformError> {
        self.tokens
            .get(actor)
            .map(String::as_str)
            .ok_or_else(|| PlatformError::UnknownAccount(actor.clone()))
    }

    fn request(&self, method: Method, path: &str, token: &str) -> RequestBuilder {
        self.http
            .request(method, format!("{}{}", self.base_url, path))
            .bearer_auth(token)
    }

    fn send(&self, builder: RequestBuilder) -> Result<Value, PlatformError> {
        let response = builder.send().map_err(|e| PlatformError::Remote(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| PlatformError::Remote(e.to_string()))?;
        if !status.is_success() {
            return Err(PlatformError::Remote(format!("HTTP {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| PlatformError::Remote(format!("bad JSON: {e}")))
    }

    fn record(&mut self, actor: &AccountId, payload: EventPayload) -> Result<(), PlatformError> {
        let event = PlatformEvent {
            seq: self.mirror.events().len() as u64,
            episode: self.episode,
            created_at: self.now,
            actor: actor.clone(),
            kind: payload.kind(),
            payload,
        };
        self.mirror.apply(event)
    }

    fn last_toot(&self) -> Toot {
        self.mirror.toots().last().cloned().expect("a toot was just mirrored")
    }

    fn relationship(&mut self, actor: &AccountId, target: &AccountId, verb: &str) -> Result<(), PlatformError> {
        self.mirror.require_account(actor)?;
        self.mirror.require_account(target)?;
        if actor == target {
            return Err(PlatformError::SelfTarget(actor.clone()));
        }
        let token = self.token(actor)?.to_string();
        self.send(self.request(Method::POST, &format!("/api/v1/accounts/{target}/{verb}"), &token))?;
        Ok(())
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Result<&'a str, PlatformError> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| PlatformError::Remote(format!("response lacks `{key}`")))
}

/// Plain text of a status body: tags dropped, paragraphs become newlines,
/// basic entities decoded.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::new();
    let mut rest = html;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let Some(close) = rest[open..].find('>') else {
            rest = &rest[open..];
            break;
        };
        let tag = &rest[open + 1..open + close];
        if (tag.starts_with("br") || tag == "/p") && !out.is_empty() {
            out.push('\n');
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out.trim_end()
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn parse_status(v: &Value) -> Result<Toot, PlatformError> {
    let created = str_field(v, "created_at")?;
    let created_at = DateTime::parse_from_rfc3339(created)
        .map_err(|e| PlatformError::Remote(format!("bad created_at `{created}`: {e}")))?
        .naive_utc();
    let author = AccountId(str_field(v.get("account").unwrap_or(&Value::Null), "id")?.to_string());
    let reblog = v.get("reblog").filter(|r| !r.is_null());
    Ok(Toot {
        id: TootId(str_field(v, "id")?.to_string()),
        author,
        text: if reblog.is_some() { String::new() } else { html_to_text(v.get("content").and_then(Value::as_str).unwrap_or("")) },
        created_at,
        in_reply_to: v.get("in_reply_to_id").and_then(Value::as_str).map(TootId::from),
        mentions: v
            .get("mentions")
            .and_then(Value::as_array)
            .map(|ms| ms.iter().filter_map(|m| m.get("id").and_then(Value::as_str)).map(AccountId::from).collect())
            .unwrap_or_default(),
        boost_of: reblog.and_then(|r| r.get("id")).and_then(Value::as_str).map(TootId::from),
    })
}

impl Platform for MastodonClient {
    fn provision_account(
        &mut self,
        username: &str,
        display_name: &str,
        bio: &str,
    ) -> Result<AccountId, PlatformError> {
        let (id, token) = match self.bound.get(username) {
            Some(id) => {
                let account = self.mirror.require_account(id)?;
                if account.display_name == display_name && account.bio == bio {
                    return Ok(id.clone());
                }
                (id.clone(), self.token(id)?.to_string())
            }
            None => {
                let token = self
                    .blank_tokens
                    .get(self.next_blank)
                    .cloned()
                    .ok_or_else(|| PlatformError::NoBlankAccount(username.to_string()))?;
                let me = self.send(self.request(Method::GET, "/api/v1/accounts/verify_credentials", &token))?;
                self.next_blank += 1;
                (AccountId(str_field(&me, "id")?.to_string()), token)
            }
        };
        let me = self.send(
            self.request(Method::PATCH, "/api/v1/accounts/update_credentials", &token)
                .json(&json!({ "display_name": display_name, "note": bio })),
        )?;
        let server_username = str_field(&me, "username")?.to_string();
        self.tokens.insert(id.clone(), token);
        self.bound.insert(username.to_string(), id.clone());
        self.record(
            &id,
            EventPayload::ProfileUpdate {
                username: server_username,
                display_name: display_name.to_string(),
                bio: bio.to_string(),
            },
        )?;
        Ok(id)
    }

    fn post_toot(&mut self, actor: &AccountId, text: &str) -> Result<Toot, PlatformError> {
        self.mirror.require_account(actor)?;
        check_text(text)?;
        let token = self.token(actor)?.to_string();
        let status = self.send(
            self.request(Method::POST, "/api/v1/statuses", &token).json(&json!({ "status": text })),
        )?;
        let toot_id = TootId(str_field(&status, "id")?.to_string());
        let mentions = extract_mentions(text, &self.mirror);
        self.record(actor, EventPayload::Toot { toot_id, text: text.to_string(), mentions })?;
        Ok(self.last_toot())
    }

    fn reply(&mut self, actor: &AccountId, parent: &TootId, text: &str) -> Result<Toot, PlatformError> {
        self.mirror.require_account(actor)?;
        let parent_author = self.mirror.require_toot(parent)?.author.clone();
        self.mirror.require_no_block(actor, &parent_author)?;
        check_text(text)?;
        let token = self.token(actor)?.to_string();
        let status = self.send(
            self.request(Method::POST, "/api/v1/statuses", &token)
                .json(&json!({ "status": text, "in_reply_to_id": parent.0 })),
        )?;
        let toot_id = TootId(str_field(&status, "id")?.to_string());
        let mentions = extract_mentions(text, &self.mirror);
        self.record(
            actor,
            EventPayload::Reply { toot_id, parent: parent.clone(), text: text.to_string(), mentions },
        )?;
        Ok(self.last_toot())
    }

    fn boost(&mut self, actor: &AccountId, toot: &TootId) -> Result<Toot, PlatformError> {
        self.mirror.require_account(actor)?;
        let target = self.mirror.require_toot(toot)?.clone();
        let original = target.boost_of.clone().unwrap_or_else(|| toot.clone());
        let original_author = self.mirror.require_toot(&original)?.author.clone();
        self.mirror.require_no_block(actor, &original_author)?;
        self.mirror.require_no_block(actor, &target.author)?;
        if let Some(existing) = self
            .mirror
            .toots()
            .iter()
            .find(|t| t.author == *actor && t.boost_of.as_ref() == Some(&original))
        {
            return Ok(existing.clone());
        }
        let token = self.token(actor)?.to_string();
        let status = self.send(self.request(Method::POST, &format!("/api/v1/statuses/{original}/reblog"), &token))?;
        let toot_id = TootId(str_field(&status, "id")?.to_string());
        self.record(actor, EventPayload::Boost { toot_id, target: original })?;
        Ok(self.last_toot())
    }

    fn favorite(&mut self, actor: &AccountId, toot: &TootId) -> Result<(), PlatformError> {
        self.mirror.require_account(actor)?;
        let author = self.mirror.require_toot(toot)?.author.clone();
        self.mirror.require_no_block(actor, &author)?;
        if self.mirror.has_favorited(actor, toot) {
            return Ok(());
        }
        let token = self.token(actor)?.to_string();
        self.send(self.request(Method::POST, &format!("/api/v1/statuses/{toot}/favourite"), &token))?;
        self.record(actor, EventPayload::Favorite { target: toot.clone() })
    }

    fn follow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        self.mirror.require_no_block(actor, target)?;
        if self.mirror.is_following(actor, target) {
            return self.mirror.require_account(actor).map(|_| ());
        }
        self.relationship(actor, target, "follow")?;
        self.record(actor, EventPayload::Follow { target: target.clone() })
    }

    fn unfollow(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        if !self.mirror.is_following(actor, target) {
            self.mirror.require_account(actor)?;
            self.mirror.require_account(target)?;
            return Ok(());
        }
        self.relationship(actor, target, "unfollow")?;
        self.record(actor, EventPayload::Unfollow { target: target.clone() })
    }

    fn block(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        if self.mirror.has_blocked(actor, target) {
            return Ok(());
        }
        self.relationship(actor, target, "block")?;
        self.record(actor, EventPayload::Block { target: target.clone() })
    }

    fn unblock(&mut self, actor: &AccountId, target: &AccountId) -> Result<(), PlatformError> {
        if !self.mirror.has_blocked(actor, target) {
            self.mirror.require_account(actor)?;
            self.mirror.require_account(target)?;
            return Ok(());
        }
        self.relationship(actor, target, "unblock")?;
        self.record(actor, EventPayload::Unblock { target: target.clone() })
    }

    fn update_profile(&mut self, actor: &AccountId, bio: &str) -> Result<(), PlatformError> {
        let account = self.mirror.require_account(actor)?.clone();
        let len = bio.chars().count();
        if len > MAX_TOOT_CHARS {
            return Err(PlatformError::Oversize(len));
        }
        let token = self.token(actor)?.to_string();
        self.send(
            self.request(Method::PATCH, "/api/v1/accounts/update_credentials", &token)
                .json(&json!({ "note": bio })),
        )?;
        self.record(
            actor,
            EventPayload::ProfileUpdate {
                username: account.username,
                display_name: account.display_name,
                bio: bio.to_string(),
            },
        )
    }

    fn home_timeline(&self, actor: &AccountId, limit: usize) -> Result<Vec<Toot>, PlatformError> {
        let token = self.token(actor)?;
        let statuses = self.send(
            self.request(Method::GET, &format!("/api/v1/timelines/home?limit={limit}"), token),
        )?;
        let mut toots = statuses
            .as_array()
            .ok_or_else(|| PlatformError::Remote("timeline is not an array".into()))?
            .iter()
            .map(parse_status)
            .collect::<Result<Vec<_>, _>>()?;
        toots.truncate(limit);
        Ok(toots)
    }

    fn get_toot(&self, id: &TootId) -> Result<Toot, PlatformError> {
        if let Some(t) = self.mirror.toot(id) {
            return Ok(t.clone());
        }
        let token = self.tokens.values().next().ok_or_else(|| PlatformError::UnknownToot(id.clone()))?;
        parse_status(&self.send(self.request(Method::GET, &format!("/api/v1/statuses/{id}"), token))?)
    }

    fn set_clock(&mut self, episode: i64, now: NaiveDateTime) {
        self.episode = episode;
        self.now = now;
    }

    fn state(&self) -> &PlatformState {
        &self.mirror
    }

    fn identity(&self) -> String {
        format!("mastodon:{}", self.base_url)
    }
}
