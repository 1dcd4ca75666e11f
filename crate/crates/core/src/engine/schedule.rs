use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::scenario::{ScenarioConfig, ScenarioError};

/// Daily app-opening slots per agent, in agent order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    pub episodes: u32,
    pub stochastic_rate: f64,
    pub slots: Vec<BTreeSet<u32>>,
}

/// Why an agent is active in an episode; both can hold at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Activity {
    pub scheduled: bool,
    pub stochastic: bool,
}

impl Activity {
    pub fn active(self) -> bool {
        self.scheduled || self.stochastic
    }
}

/// `base_rate` distinct slots drawn uniformly from `0..episodes`.
pub fn draw_slots<R: Rng + ?Sized>(base_rate: u32, episodes: u32, rng: &mut R) -> BTreeSet<u32> {
    sample(rng, episodes as usize, base_rate as usize).into_iter().map(|i| i as u32).collect()
}

/// One slot set per agent, each from the agent's own stream.
pub fn build_schedule(config: &ScenarioConfig) -> Result<EpisodeSchedule, ScenarioError> {
    let episodes = config.episodes_per_day;
    let slots = config
        .agents
        .iter()
        .map(|agent| {
            let rate = config.base_rate_of(agent);
            if rate > episodes {
                return Err(ScenarioError::Invalid(format!(
                    "base_rate {rate} of {} exceeds episodes_per_day {episodes}",
                    agent.name
                )));
            }
            Ok(draw_slots(rate, episodes, &mut stream(config.seed, &format!("schedule/{}", agent.name))))
        })
        .collect::<Result<_, _>>()?;
    Ok(EpisodeSchedule { episodes, stochastic_rate: config.scheduler.stochastic_rate, slots })
}

/// Scheduled slot or a Bernoulli(`stochastic_rate`) success. The Bernoulli
/// draw is always taken so the stream advances identically either way.
pub fn activity<R: Rng + ?Sized>(schedule: &EpisodeSchedule, agent: usize, episode: u32, rng: &mut R) -> Activity {
    let stochastic = rng.gen_bool(schedule.stochastic_rate);
    Activity { scheduled: schedule.slots[agent].contains(&episode), stochastic }
}

pub fn is_active<R: Rng + ?Sized>(schedule: &EpisodeSchedule, agent: usize, episode: u32, rng: &mut R) -> bool {
    activity(schedule, agent, episode, rng).active()
}

/// Stream used for the stochastic draw of `agent` in `episode`.
pub fn activity_stream(seed: u64, agent: &str, episode: u32) -> crate::rng::StreamRng {
    stream(seed, &format!("activity/{agent}/{episode}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{builtin_storhampton_scenario, ExperimentVariant, MALICIOUS_BASE_RATE, GLENN_NAME};

    #[test]
    fn slot_counts_follow_base_rates() {
        let cfg = builtin_storhampton_scenario(ExperimentVariant::Malicious, 20);
        let s = build_schedule(&cfg).unwrap();
        for (agent, slots) in cfg.agents.iter().zip(&s.slots) {
            assert_eq!(slots.len() as u32, cfg.base_rate_of(agent));
            assert!(slots.iter().all(|e| *e < 48));
        }
        let glenn = cfg.agents.iter().position(|a| a.name == GLENN_NAME).unwrap();
        assert_eq!(s.slots[glenn].len() as u32, MALICIOUS_BASE_RATE);
    }

    #[test]
    fn saturated_rate_fills_every_slot() {
        let mut cfg = builtin_storhampton_scenario(ExperimentVariant::Control, 3);
        cfg.scheduler.base_rate_default = 48;
        let s = build_schedule(&cfg).unwrap();
        assert!(s.slots.iter().all(|set| set.len() == 48));
        cfg.agents[0].base_rate = Some(49);
        assert!(build_schedule(&cfg).is_err());
    }

    #[test]
    fn stochastic_extremes() {
        let mut cfg = builtin_storhampton_scenario(ExperimentVariant::Control, 3);
        cfg.scheduler.stochastic_rate = 1.0;
        let s = build_schedule(&cfg).unwrap();
        assert!((0..48).all(|e| is_active(&s, 0, e, &mut activity_stream(1, "a", e))));
        cfg.scheduler.stochastic_rate = 0.0;
        let s = build_schedule(&cfg).unwrap();
        for e in 0..48 {
            assert_eq!(is_active(&s, 1, e, &mut activity_stream(1, "a", e)), s.slots[1].contains(&e));
        }
    }
}
