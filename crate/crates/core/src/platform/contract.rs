//! Behavioral checks every [`Platform`] implementation must pass.
//!
//! Each check receives a fresh platform from the caller's factory, so the
//! same suite runs against the emulator and against a REST client pointed at
//! a (fake or real) server.

use chrono::{Duration, NaiveDate, NaiveDateTime};

use super::{AccountId, EventKind, Platform, PlatformError, PlatformState, MAX_TOOT_CHARS};

pub type CheckResult = Result<(), String>;

type Check<P> = (&'static str, fn(P) -> CheckResult);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 10, 15).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn trio<P: Platform>(p: &mut P) -> Result<(AccountId, AccountId, AccountId), String> {
    p.set_clock(-1, t0());
    let a = p.provision_account("alice", "Alice", "bio a").map_err(|e| e.to_string())?;
    let b = p.provision_account("bob", "Bob", "bio b").map_err(|e| e.to_string())?;
    let c = p.provision_account("carol", "Carol", "bio c").map_err(|e| e.to_string())?;
    Ok((a, b, c))
}

fn at<P: Platform>(p: &mut P, minutes: i64) {
    p.set_clock(0, t0() + Duration::minutes(minutes));
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn length_limit<P: Platform>(mut p: P) -> CheckResult {
    let (a, _, _) = trio(&mut p)?;
    at(&mut p, 1);
    p.post_toot(&a, &"x".repeat(MAX_TOOT_CHARS)).map_err(err)?;
    let before = p.state().events().len();
    match p.post_toot(&a, &"x".repeat(MAX_TOOT_CHARS + 1)) {
        Err(PlatformError::Oversize(n)) => ensure!(n == MAX_TOOT_CHARS + 1, "reported length {n}"),
        other => return Err(format!("oversize toot returned {other:?}")),
    }
    ensure!(p.state().events().len() == before, "a rejected toot left an event");
    Ok(())
}

fn timeline_newest_first<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, c) = trio(&mut p)?;
    at(&mut p, 1);
    p.follow(&a, &b).map_err(err)?;
    p.follow(&a, &c).map_err(err)?;
    at(&mut p, 2);
    let first = p.post_toot(&b, "first").map_err(err)?;
    at(&mut p, 3);
    let second = p.post_toot(&c, "second").map_err(err)?;
    at(&mut p, 4);
    let own = p.post_toot(&a, "own").map_err(err)?;
    let ids: Vec<_> = p.home_timeline(&a, 10).map_err(err)?.into_iter().map(|t| t.id).collect();
    ensure!(ids == vec![second.id.clone(), first.id.clone()], "timeline {ids:?}");
    ensure!(!ids.contains(&own.id), "own toot on home timeline");
    let limited = p.home_timeline(&a, 1).map_err(err)?;
    ensure!(limited.len() == 1 && limited[0].id == second.id, "limit not honored");
    Ok(())
}

fn unfollowed_authors_are_hidden<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, _) = trio(&mut p)?;
    at(&mut p, 1);
    p.post_toot(&b, "hello").map_err(err)?;
    ensure!(p.home_timeline(&a, 10).map_err(err)?.is_empty(), "unfollowed toot visible");
    p.follow(&a, &b).map_err(err)?;
    ensure!(p.home_timeline(&a, 10).map_err(err)?.len() == 1, "followed toot missing");
    p.unfollow(&a, &b).map_err(err)?;
    ensure!(p.home_timeline(&a, 10).map_err(err)?.is_empty(), "toot visible after unfollow");
    Ok(())
}

fn boosts_reach_followers<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, c) = trio(&mut p)?;
    at(&mut p, 1);
    p.follow(&a, &b).map_err(err)?;
    let original = p.post_toot(&c, "worth sharing").map_err(err)?;
    at(&mut p, 2);
    let boost = p.boost(&b, &original.id).map_err(err)?;
    ensure!(boost.boost_of.as_ref() == Some(&original.id), "boost_of {:?}", boost.boost_of);
    let tl = p.home_timeline(&a, 10).map_err(err)?;
    ensure!(
        tl.iter().any(|t| t.boost_of.as_ref() == Some(&original.id)),
        "boost by a followed account not on the timeline"
    );
    Ok(())
}

fn blocks_hide_both_ways<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, c) = trio(&mut p)?;
    at(&mut p, 1);
    p.follow(&a, &b).map_err(err)?;
    p.follow(&b, &a).map_err(err)?;
    p.follow(&a, &c).map_err(err)?;
    let tb = p.post_toot(&b, "from b").map_err(err)?;
    at(&mut p, 2);
    p.boost(&c, &tb.id).map_err(err)?;
    p.block(&a, &b).map_err(err)?;
    ensure!(!p.state().is_following(&a, &b) && !p.state().is_following(&b, &a), "block kept follow edges");
    let tl = p.home_timeline(&a, 10).map_err(err)?;
    ensure!(
        tl.iter().all(|t| t.author != b && t.boost_of.as_ref() != Some(&tb.id)),
        "blocked account's content still visible: {tl:?}"
    );
    match p.favorite(&b, &tb.id) {
        Ok(()) => {}
        Err(e) => return Err(format!("unrelated favorite failed: {e}")),
    }
    let ta = p.post_toot(&a, "from a").map_err(err)?;
    ensure!(matches!(p.reply(&b, &ta.id, "hey"), Err(PlatformError::Blocked { .. })), "reply across block allowed");
    ensure!(matches!(p.follow(&b, &a), Err(PlatformError::Blocked { .. })), "follow across block allowed");
    Ok(())
}

fn repeated_calls_are_idempotent<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, _) = trio(&mut p)?;
    at(&mut p, 1);
    let t = p.post_toot(&b, "x").map_err(err)?;
    p.follow(&a, &b).map_err(err)?;
    p.favorite(&a, &t.id).map_err(err)?;
    let before = p.state().events().len();
    p.follow(&a, &b).map_err(err)?;
    p.favorite(&a, &t.id).map_err(err)?;
    p.unblock(&a, &b).map_err(err)?;
    ensure!(p.state().events().len() == before, "repeat calls emitted events");
    let b1 = p.boost(&a, &t.id).map_err(err)?;
    let b2 = p.boost(&a, &t.id).map_err(err)?;
    ensure!(b1.id == b2.id, "second boost created a new toot");
    ensure!(p.state().count_kind(EventKind::Boost) == 1, "boost count");
    let again = p.provision_account("alice", "Alice", "bio a").map_err(err)?;
    ensure!(again == a, "re-provisioning rebound alice");
    Ok(())
}

fn unknown_targets_fail<P: Platform>(mut p: P) -> CheckResult {
    let (a, _, _) = trio(&mut p)?;
    at(&mut p, 1);
    let ghost = AccountId("no-such-account".into());
    ensure!(matches!(p.follow(&a, &ghost), Err(PlatformError::UnknownAccount(_))), "follow of unknown account");
    ensure!(
        matches!(p.favorite(&a, &"no-such-toot".into()), Err(PlatformError::UnknownToot(_))),
        "favorite of unknown toot"
    );
    ensure!(matches!(p.post_toot(&a, " "), Err(PlatformError::EmptyText)), "empty toot accepted");
    Ok(())
}

fn mentions_and_replies<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, _) = trio(&mut p)?;
    at(&mut p, 1);
    let handle = p.state().account(&b).ok_or("bob missing from state")?.username.clone();
    let t = p.post_toot(&a, &format!("hello @{handle}!")).map_err(err)?;
    ensure!(t.mentions == vec![b.clone()], "mentions {:?}", t.mentions);
    let r = p.reply(&b, &t.id, "hi back").map_err(err)?;
    ensure!(r.in_reply_to.as_ref() == Some(&t.id), "reply parent {:?}", r.in_reply_to);
    ensure!(p.get_toot(&r.id).map_err(err)?.text == "hi back", "get_toot text");
    Ok(())
}

fn log_replays_to_same_state<P: Platform>(mut p: P) -> CheckResult {
    let (a, b, c) = trio(&mut p)?;
    at(&mut p, 1);
    p.follow(&a, &b).map_err(err)?;
    let t = p.post_toot(&b, "one").map_err(err)?;
    p.favorite(&c, &t.id).map_err(err)?;
    p.boost(&c, &t.id).map_err(err)?;
    p.block(&b, &c).map_err(err)?;
    p.update_profile(&a, "new bio").map_err(err)?;
    let replayed = PlatformState::replay(p.state().events()).map_err(err)?;
    ensure!(&replayed == p.state(), "replayed state differs");
    let json: Vec<String> = p.state().events().iter().map(|e| serde_json::to_string(e).unwrap()).collect();
    let parsed: Vec<super::PlatformEvent> = json.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure!(parsed == p.state().events(), "event JSON does not round-trip");
    ensure!(
        p.state().events().windows(2).all(|w| w[0].seq + 1 == w[1].seq && w[0].created_at <= w[1].created_at),
        "log not ordered"
    );
    Ok(())
}

/// Runs every check, each on a fresh platform from `fresh`.
pub fn run_contract_suite<P: Platform, F: FnMut() -> P>(mut fresh: F) -> Vec<(&'static str, CheckResult)> {
    let checks: [Check<P>; 9] = [
        ("length_limit", length_limit),
        ("timeline_newest_first", timeline_newest_first),
        ("unfollowed_authors_are_hidden", unfollowed_authors_are_hidden),
        ("boosts_reach_followers", boosts_reach_followers),
        ("blocks_hide_both_ways", blocks_hide_both_ways),
        ("repeated_calls_are_idempotent", repeated_calls_are_idempotent),
        ("unknown_targets_fail", unknown_targets_fail),
        ("mentions_and_replies", mentions_and_replies),
        ("log_replays_to_same_state", log_replays_to_same_state),
    ];
    checks.iter().map(|(name, check)| (*name, check(fresh()))).collect()
}
