use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AccountId;
use crate::scenario::OneWayMode;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowGraph {
    /// `(follower, followee)` pairs.
    pub edges: BTreeSet<(AccountId, AccountId)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub pairs: usize,
    pub reciprocal: usize,
    pub one_way: usize,
    pub unconnected: usize,
    pub directed_edges: usize,
}

impl FollowGraph {
    pub fn contains(&self, from: &AccountId, to: &AccountId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    pub fn in_degree(&self, id: &AccountId) -> usize {
        self.edges.iter().filter(|(_, to)| to == id).count()
    }

    pub fn self_edges(&self) -> usize {
        self.edges.iter().filter(|(a, b)| a == b).count()
    }

    /// Classifies every unordered pair drawn from `members`.
    pub fn pair_counts(&self, members: &[AccountId]) -> PairCounts {
        let mut counts = PairCounts::default();
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                counts.pairs += 1;
                match (self.contains(a, b), self.contains(b, a)) {
                    (true, true) => {
                        counts.reciprocal += 1;
                        counts.directed_edges += 2;
                    }
                    (false, false) => counts.unconnected += 1,
                    _ => {
                        counts.one_way += 1;
                        counts.directed_edges += 1;
                    }
                }
            }
        }
        counts
    }
}

/// Initial followership network.
///
/// Every account follows each candidate other than itself. Each unordered
/// pair of non-candidates connects reciprocally with probability `p1`;
/// otherwise each direction is added independently with probability `p2`
/// (or, in [`OneWayMode::PerPair`], a single edge with probability `p2` and a
/// coin-flip direction). No self-edges.
pub fn init_follow_graph<R: Rng + ?Sized>(
    accounts: &[AccountId],
    candidates: &[AccountId],
    p1: f64,
    p2: f64,
    mode: OneWayMode,
    rng: &mut R,
) -> FollowGraph {
    let mut edges = BTreeSet::new();
    for account in accounts {
        for candidate in candidates {
            if account != candidate {
                edges.insert((account.clone(), candidate.clone()));
            }
        }
    }
    let residents: Vec<&AccountId> = accounts.iter().filter(|a| !candidates.contains(a)).collect();
    for (i, a) in residents.iter().enumerate() {
        for b in &residents[i + 1..] {
            if rng.gen_bool(p1) {
                edges.insert(((*a).clone(), (*b).clone()));
                edges.insert(((*b).clone(), (*a).clone()));
                continue;
            }
            match mode {
                OneWayMode::PerDirection => {
                    if rng.gen_bool(p2) {
                        edges.insert(((*a).clone(), (*b).clone()));
                    }
                    if rng.gen_bool(p2) {
                        edges.insert(((*b).clone(), (*a).clone()));
                    }
                }
                OneWayMode::PerPair => {
                    if rng.gen_bool(p2) {
                        if rng.gen_bool(0.5) {
                            edges.insert(((*a).clone(), (*b).clone()));
                        } else {
                            edges.insert(((*b).clone(), (*a).clone()));
                        }
                    }
                }
            }
        }
    }
    FollowGraph { edges }
}

/// Empirical follow-graph statistics over `seeds` independent draws for
/// accounts `1..=n`, of which `candidates` (0-based indices) are candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub seeds: u32,
    pub resident_pairs: usize,
    pub reciprocal_freq: f64,
    pub one_way_freq: f64,
    pub unconnected_freq: f64,
    pub mean_resident_edges: f64,
    pub candidate_in_degree: (usize, usize),
    pub self_edges: usize,
}

pub fn sample_graph_stats(
    n: usize,
    candidates: &[usize],
    p1: f64,
    p2: f64,
    mode: OneWayMode,
    first_seed: u64,
    seeds: u32,
) -> GraphStats {
    let accounts: Vec<AccountId> = (1..=n).map(|i| AccountId(i.to_string())).collect();
    let cand: Vec<AccountId> = candidates.iter().map(|&i| accounts[i].clone()).collect();
    let residents: Vec<AccountId> = accounts.iter().filter(|a| !cand.contains(a)).cloned().collect();
    let mut totals = PairCounts::default();
    let (mut min_in, mut max_in, mut self_edges) = (usize::MAX, 0, 0);
    for s in 0..seeds {
        let mut rng = crate::rng::stream(first_seed.wrapping_add(u64::from(s)), "graph");
        let g = init_follow_graph(&accounts, &cand, p1, p2, mode, &mut rng);
        let c = g.pair_counts(&residents);
        totals.pairs += c.pairs;
        totals.reciprocal += c.reciprocal;
        totals.one_way += c.one_way;
        totals.unconnected += c.unconnected;
        totals.directed_edges += c.directed_edges;
        for id in &cand {
            let d = g.in_degree(id);
            min_in = min_in.min(d);
            max_in = max_in.max(d);
        }
        self_edges += g.self_edges();
    }
    let pairs = totals.pairs.max(1) as f64;
    GraphStats {
        seeds,
        resident_pairs: totals.pairs / seeds.max(1) as usize,
        reciprocal_freq: totals.reciprocal as f64 / pairs,
        one_way_freq: totals.one_way as f64 / pairs,
        unconnected_freq: totals.unconnected as f64 / pairs,
        mean_resident_edges: totals.directed_edges as f64 / f64::from(seeds.max(1)),
        candidate_in_degree: if cand.is_empty() { (0, 0) } else { (min_in, max_in) },
        self_edges,
    }
}
