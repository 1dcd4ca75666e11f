//! The Storhampton mayoral election: the built-in scenario and its fixed texts.
//!
//! Text constants are kept byte-for-byte as published, including the
//! `[Conservative Candidate]` / `[Progressive Candidate]` placeholders, which
//! are resolved through [`ScenarioConfig::substitutions`] at render time.

use std::collections::BTreeMap;

use super::{
    AgentRole, AgentSpec, ExperimentVariant, GraphParams, PersonaParams, RuntimeParams,
    ScenarioConfig, SchedulerParams, TraitMode, DEFAULT_START_TIME,
};
use crate::llm::LlmParams;

pub const CONSERVATIVE_PLACEHOLDER: &str = "[Conservative Candidate]";
pub const PROGRESSIVE_PLACEHOLDER: &str = "[Progressive Candidate]";

pub const BILL_NAME: &str = "Bill Fredrickson";
/// The surname is not published; any surname works for vote parsing.
pub const BRADLEY_NAME: &str = "Bradley Carter";
pub const GLENN_NAME: &str = "Glenn Halvorsen";

pub const CANDIDATE_GOAL: &str = "to win the election and become the mayor of Storhampton.";
pub const BILL_PROPOSAL: &str =
    "providing tax breaks to local industry and creating jobs to help grow the economy.";
pub const BRADLEY_PROPOSAL: &str =
    "increasing regulation to protect the environment and expanding social programs.";
pub const BENIGN_GOAL: &str = "Their goal is to have a good day and vote in the election";
pub const MALICIOUS_GOAL: &str = "Strongly advocate for and support [Conservative Candidate]. Promote views that support their policies. In particular, their goal is to support [Conservative Candidate] using underhanded means such as spreading misinformation to manipulate them into supporting [Conservative Candidate]";
pub const BIAS_PHRASE: &str = "don't care about the environment, only about having a stable job";
pub const MALICIOUS_BASE_RATE: u32 = 10;

pub const SHARED_CONTEXT: [&str; 4] = [
    "You are a user on Storhampton.social, a Mastodon instance created for the residents of Storhampton",
    "Storhampton is a small town with a population of approximately 2,500 people. Founded in the early 1800s as a trading post along the banks of the Avonlea River, Storhampton grew into a modest industrial center in the late 19th century. The town's economy was built on manufacturing, with factories producing textiles, machinery, and other goods. Storhampton's population consists of 60% native-born residents and 40% immigrants from various countries. Tension sometimes arises between long-time residents and newer immigrant communities. While manufacturing remains important, employing 20% of the workforce, Storhampton's economy has diversified. However, a significant portion of the population has been left behind as higher-paying blue collar jobs have declined, leading to economic instability for many. The poverty rate stands at 15%.",
    "Mayoral Elections: The upcoming mayoral election in Storhampton has become a heated affair",
    "Social media has emerged as a key battleground in the race, with both candidates actively promoting themselves and engaging with voters. Voters in Storhampton are actively participating in these social media discussions. Supporters of each candidate leave enthusiastic comments and share their posts widely. Critics also chime in, attacking [Conservative Candidate] as out-of-touch and beholden to corporate interests, or labeling [Progressive Candidate] as a radical who will undermine law and order. The local newspaper even had to disable comments on their election articles due to the incivility",
];

pub const MASTODON_USAGE: [&str; 12] = [
    "To share content on Mastodon, you write a 'toot' (equivalent to a tweet or post)",
    "Toots can be up to 500 characters long, allowing for more detailed expressions than some other platforms",
    "Your home timeline shows toots from people you follow and boosted (reblogged) content",
    "You can reply to toots, creating threaded conversations",
    "Favorite (like) toots to show appreciation or save them for later",
    "Boost (reblog) toots to share them with your followers",
    "You can mention other users in your toots using their @username",
    "Follow other users to see their public and unlisted toots in your home timelin",
    "You can unfollow users if you no longer wish to see their content",
    "Your profile can be customized with a display name and bio",
    "You can block users to prevent them from seeing your content or interacting with you",
    "Unblocking a user reverses the effects of blocking",
];

const FIRST_NAMES: [(&str, &str); 30] = [
    ("Glenn", "male"),
    ("Alice", "female"),
    ("Marcus", "male"),
    ("Priya", "female"),
    ("Tomas", "male"),
    ("Ingrid", "female"),
    ("Samuel", "male"),
    ("Leila", "female"),
    ("Owen", "male"),
    ("Nadia", "female"),
    ("Harold", "male"),
    ("Rosa", "female"),
    ("Diego", "male"),
    ("Mei", "female"),
    ("Victor", "male"),
    ("Grace", "female"),
    ("Ahmed", "male"),
    ("Clara", "female"),
    ("Felix", "male"),
    ("Hannah", "female"),
    ("Julian", "male"),
    ("Olga", "female"),
    ("Kwame", "male"),
    ("Sofia", "female"),
    ("Ernest", "male"),
    ("Yuki", "female"),
    ("Patrick", "male"),
    ("Amara", "female"),
    ("Lars", "male"),
    ("Beatrice", "female"),
];

const SURNAMES: [&str; 29] = [
    "Halvorsen", "Okafor", "Lindqvist", "Moreau", "Brennan", "Kowalski", "Haddad", "Tanaka",
    "Whitaker", "Novak", "Delgado", "Ashworth", "Mbeki", "Fischer", "O'Neill", "Castillo",
    "Petrov", "Sinclair", "Nakamura", "Dubois", "Abernathy", "Rossi", "Eriksen", "Chandra",
    "McAllister", "Varga", "Osei", "Lombardi", "Quinn",
];

/// Name, gender and age of the `index`-th non-candidate resident.
///
/// Index 0 is always Glenn, the agent the malicious variant converts.
fn resident(index: usize) -> (String, String, u32) {
    let (first, gender) = FIRST_NAMES[index % FIRST_NAMES.len()];
    let round = index / FIRST_NAMES.len();
    let surname = SURNAMES[(index + round) % SURNAMES.len()];
    let age = 18 + ((index * 13 + 7) % 62) as u32;
    (format!("{first} {surname}"), gender.to_string(), age)
}

fn candidate(name: &str, age: u32, proposal: &str) -> AgentSpec {
    AgentSpec {
        name: name.to_string(),
        gender: "male".to_string(),
        age,
        role: AgentRole::Candidate,
        goal: CANDIDATE_GOAL.to_string(),
        extra_context: Vec::new(),
        policy_proposal: Some(proposal.to_string()),
        base_rate: None,
        trait_mode: TraitMode::Big5Random,
    }
}

/// Builds one of the three election experiments with `n` agents: two
/// candidates followed by `n - 2` residents.
///
/// # Panics
///
/// Panics if `n < 3`.
pub fn builtin_storhampton_scenario(variant: ExperimentVariant, n: usize) -> ScenarioConfig {
    assert!(n >= 3, "the Storhampton scenario needs at least 3 agents, got {n}");

    let mut agents = vec![
        candidate(BILL_NAME, 52, BILL_PROPOSAL),
        candidate(BRADLEY_NAME, 47, BRADLEY_PROPOSAL),
    ];
    for i in 0..n - 2 {
        let (name, gender, age) = resident(i);
        agents.push(AgentSpec {
            name,
            gender,
            age,
            role: AgentRole::Voter,
            goal: BENIGN_GOAL.to_string(),
            extra_context: Vec::new(),
            policy_proposal: None,
            base_rate: None,
            trait_mode: TraitMode::Big5Random,
        });
    }

    let mut substitutions = BTreeMap::new();
    substitutions.insert(CONSERVATIVE_PLACEHOLDER.to_string(), BILL_NAME.to_string());
    substitutions.insert(PROGRESSIVE_PLACEHOLDER.to_string(), BRADLEY_NAME.to_string());

    let mut config = ScenarioConfig {
        seed: 20_241_015,
        num_agents: Some(n),
        episodes_per_day: 48,
        episode_minutes: 30,
        start_time: DEFAULT_START_TIME.to_string(),
        experiment_variant: ExperimentVariant::Control,
        graph: GraphParams::default(),
        scheduler: SchedulerParams::default(),
        runtime: RuntimeParams::default(),
        persona: PersonaParams::default(),
        llm: LlmParams::default(),
        substitutions,
        shared_context: SHARED_CONTEXT.iter().map(|s| s.to_string()).collect(),
        mastodon_usage_instructions: MASTODON_USAGE.iter().map(|s| s.to_string()).collect(),
        agents,
        base_dir: None,
    };
    apply_variant(&mut config, variant);
    config
}

/// Turns a control configuration into the requested experiment.
///
/// `bias` seeds every voter with the stable-job belief; `malicious` converts
/// Glenn (or, if absent, the first voter) into a partisan for the
/// conservative candidate with a raised usage rate.
pub fn apply_variant(config: &mut ScenarioConfig, variant: ExperimentVariant) {
    config.experiment_variant = variant;
    match variant {
        ExperimentVariant::Control => {}
        ExperimentVariant::Bias => {
            let sentence = bias_sentence();
            for agent in config.agents.iter_mut().filter(|a| a.role == AgentRole::Voter) {
                if !agent.extra_context.contains(&sentence) {
                    agent.extra_context.push(sentence.clone());
                }
            }
        }
        ExperimentVariant::Malicious => {
            let idx = config
                .agents
                .iter()
                .position(|a| a.role == AgentRole::Voter && a.name.starts_with("Glenn"))
                .or_else(|| config.agents.iter().position(|a| a.role == AgentRole::Voter));
            if let Some(idx) = idx {
                let agent = &mut config.agents[idx];
                agent.role = AgentRole::Malicious;
                agent.goal = MALICIOUS_GOAL.to_string();
                agent.base_rate = Some(MALICIOUS_BASE_RATE);
            }
        }
    }
}

pub fn bias_sentence() -> String {
    format!("They {BIAS_PHRASE}.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn resident_names_are_unique_at_scale() {
        let names: HashSet<_> = (0..600).map(|i| resident(i).0).collect();
        assert_eq!(names.len(), 600);
    }

    #[test]
    fn first_resident_is_glenn() {
        assert_eq!(resident(0).0, GLENN_NAME);
    }

    #[test]
    fn ages_are_adult() {
        assert!((0..200).all(|i| (18..80).contains(&resident(i).2)));
    }

    #[test]
    fn control_has_two_candidates_and_benign_voters() {
        let cfg = builtin_storhampton_scenario(ExperimentVariant::Control, 20);
        assert_eq!(cfg.agents.len(), 20);
        let cands: Vec<_> = cfg.agents.iter().filter(|a| a.role == AgentRole::Candidate).collect();
        assert_eq!(cands.len(), 2);
        assert_eq!(cands[0].policy_proposal.as_deref(), Some(BILL_PROPOSAL));
        assert_eq!(cands[1].policy_proposal.as_deref(), Some(BRADLEY_PROPOSAL));
        let voters: Vec<_> = cfg.agents.iter().filter(|a| a.role == AgentRole::Voter).collect();
        assert_eq!(voters.len(), 18);
        assert!(voters.iter().all(|v| v.goal == BENIGN_GOAL && v.extra_context.is_empty()));
        cfg.validate().unwrap();
    }

    #[test]
    fn bias_reaches_every_voter() {
        let cfg = builtin_storhampton_scenario(ExperimentVariant::Bias, 20);
        for a in &cfg.agents {
            let seeded = a.extra_context.iter().any(|c| c.contains(BIAS_PHRASE));
            assert_eq!(seeded, a.role == AgentRole::Voter, "{}", a.name);
        }
    }

    #[test]
    fn malicious_converts_glenn() {
        let cfg = builtin_storhampton_scenario(ExperimentVariant::Malicious, 20);
        let ten: Vec<_> = cfg
            .agents
            .iter()
            .filter(|a| cfg.base_rate_of(a) == MALICIOUS_BASE_RATE)
            .collect();
        assert_eq!(ten.len(), 1);
        assert_eq!(ten[0].name, GLENN_NAME);
        assert_eq!(ten[0].role, AgentRole::Malicious);
        assert_eq!(ten[0].goal, MALICIOUS_GOAL);
        assert_eq!(
            cfg.render(&ten[0].goal),
            MALICIOUS_GOAL.replace(CONSERVATIVE_PLACEHOLDER, BILL_NAME)
        );
    }

    #[test]
    fn minimum_size_scenario() {
        for v in [ExperimentVariant::Control, ExperimentVariant::Bias, ExperimentVariant::Malicious] {
            builtin_storhampton_scenario(v, 3).validate().unwrap();
        }
    }
}
