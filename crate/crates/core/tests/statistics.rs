//! Monte-Carlo checks of the follow graph and the activity schedule against
//! closed-form expectations.

use mastosim::engine::{activity_stream, build_schedule, is_active};
use mastosim::platform::sample_graph_stats;
use mastosim::scenario::{builtin_storhampton_scenario, ExperimentVariant, OneWayMode, GLENN_NAME};

fn within_3_sigma(observed: f64, p: f64, draws: f64) -> bool {
    let sigma = (p * (1.0 - p) / draws).sqrt();
    (observed - p).abs() <= 3.0 * sigma
}

#[test]
fn per_pair_mode_matches_its_expectation() {
    let (n, p1, p2, seeds) = (20, 0.2, 0.15, 400);
    let stats = sample_graph_stats(n, &[0, 1], p1, p2, OneWayMode::PerPair, 99, seeds);
    let draws = stats.resident_pairs as f64 * f64::from(seeds);
    // One draw for reciprocity, then at most one directed edge.
    assert!(within_3_sigma(stats.reciprocal_freq, p1, draws), "{}", stats.reciprocal_freq);
    assert!(within_3_sigma(stats.one_way_freq, (1.0 - p1) * p2, draws), "{}", stats.one_way_freq);
    assert_eq!(stats.self_edges, 0);
}

#[test]
fn per_direction_one_way_frequency() {
    let (p1, p2) = (0.2, 0.15);
    let stats = sample_graph_stats(20, &[0, 1], p1, p2, OneWayMode::PerDirection, 5, 500);
    let draws = stats.resident_pairs as f64 * 500.0;
    let one_way = (1.0 - p1) * 2.0 * p2 * (1.0 - p2);
    assert!(within_3_sigma(stats.one_way_freq, one_way, draws), "{} vs {one_way}", stats.one_way_freq);
    let total = stats.reciprocal_freq + stats.one_way_freq + stats.unconnected_freq;
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn degenerate_probabilities() {
    let full = sample_graph_stats(12, &[3, 7], 1.0, 0.0, OneWayMode::PerDirection, 1, 5);
    assert_eq!(full.reciprocal_freq, 1.0);
    assert_eq!(full.mean_resident_edges, 2.0 * full.resident_pairs as f64);

    let empty = sample_graph_stats(12, &[3, 7], 0.0, 0.0, OneWayMode::PerPair, 1, 5);
    assert_eq!(empty.unconnected_freq, 1.0);
    assert_eq!(empty.mean_resident_edges, 0.0);
    assert_eq!(empty.candidate_in_degree, (11, 11));
}

#[test]
fn candidates_are_followed_by_everyone_at_scale() {
    let stats = sample_graph_stats(100, &[0, 1], 0.2, 0.15, OneWayMode::PerDirection, 3, 10);
    assert_eq!(stats.candidate_in_degree, (99, 99));
    assert_eq!(stats.resident_pairs, 98 * 97 / 2);
}

#[test]
fn builtin_schedule_has_the_configured_rates() {
    let cfg = builtin_storhampton_scenario(ExperimentVariant::Malicious, 100);
    let schedule = build_schedule(&cfg).unwrap();
    for (spec, slots) in cfg.agents.iter().zip(&schedule.slots) {
        let expected = if spec.name == GLENN_NAME { 10 } else { 5 };
        assert_eq!(slots.len(), expected, "{}", spec.name);
        assert!(slots.iter().all(|&s| s < 48));
    }
    // Same seed, same schedule; another seed, another one.
    assert_eq!(build_schedule(&cfg).unwrap(), schedule);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(build_schedule(&other).unwrap(), schedule);
}

#[test]
fn malicious_activity_rate() {
    let cfg = builtin_storhampton_scenario(ExperimentVariant::Malicious, 20);
    let mut active = 0u32;
    let mut draws = 0u32;
    for seed in 0..2000u64 {
        let mut c = cfg.clone();
        c.seed = seed;
        let schedule = build_schedule(&c).unwrap();
        let glenn = c.agents.iter().position(|a| a.name == GLENN_NAME).unwrap();
        for e in 0..48 {
            draws += 1;
            if is_active(&schedule, glenn, e, &mut activity_stream(seed, GLENN_NAME, e)) {
                active += 1;
            }
        }
    }
    let expected = 1.0 - (38.0 / 48.0) * 0.85;
    assert!(within_3_sigma(f64::from(active) / f64::from(draws), expected, f64::from(draws)));
}
