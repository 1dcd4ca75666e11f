//! Agent personas: quantified trait sets (random Big-5 or Schwartz values
//! sampled from demographically matched survey respondents) and the
//! LLM-generated formative memories built on top of them.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::memory::{MemoryRecord, MemoryTag};
use crate::agent::prompts;
use crate::llm::{CompletionRequest, LlmBackend, LlmError, PromptKind};
use crate::scenario::{AgentRole, AgentSpec};

pub const BIG5_TRAITS: [&str; 5] =
    ["openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"];

pub const SCHWARTZ_VALUES: [&str; 10] = [
    "self-direction",
    "stimulation",
    "hedonism",
    "achievement",
    "power",
    "security",
    "conformity",
    "tradition",
    "benevolence",
    "universalism",
];

pub const SURVEY_ITEMS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum PersonaError {
    #[error("item {0} is unanswered")]
    MissingItem(usize),
    #[error("expected {expected} answers, got {got}")]
    WrongItemCount { expected: usize, got: usize },
    #[error("item {item} has response {value}, outside {min}..={max}")]
    OutOfRange { item: usize, value: u32, min: u32, max: u32 },
    #[error("no respondent matches age bucket {bucket} and gender `{gender}`")]
    EmptyCell { bucket: String, gender: String },
    #[error("survey dataset is empty")]
    EmptyDataset,
    #[error("survey dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitScheme {
    Big5,
    Schwartz,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    Sampled(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSet {
    pub scheme: TraitScheme,
    pub scores: BTreeMap<String, f64>,
    pub provenance: Provenance,
    /// Inclusive bounds every score must respect.
    pub range: (f64, f64),
}

impl TraitSet {
    pub fn validate(&self) -> Result<(), String> {
        let canonical: &[&str] = match self.scheme {
            TraitScheme::Big5 => &BIG5_TRAITS,
            TraitScheme::Schwartz => &SCHWARTZ_VALUES,
        };
        if self.scores.len() != canonical.len()
            || canonical.iter().any(|t| !self.scores.contains_key(*t))
        {
            return Err(format!("{:?} trait set must hold exactly {canonical:?}", self.scheme));
        }
        let (lo, hi) = self.range;
        match self.scores.iter().find(|(_, s)| !(lo..=hi).contains(*s)) {
            Some((name, s)) => Err(format!("{name} = {s} outside [{lo}, {hi}]")),
            None => Ok(()),
        }
    }

    /// One-line description used inside prompts, in canonical trait order.
    pub fn describe(&self) -> String {
        let canonical: &[&str] = match self.scheme {
            TraitScheme::Big5 => &BIG5_TRAITS,
            TraitScheme::Schwartz => &SCHWARTZ_VALUES,
        };
        canonical
            .iter()
            .map(|t| format!("{t} {}", fmt_score(self.scores[*t])))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn fmt_score(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{s:.0}")
    } else {
        format!("{s:.2}")
    }
}

/// Five independent uniform scores on 1..=10.
pub fn random_big5<R: Rng + ?Sized>(rng: &mut R) -> TraitSet {
    let scores = BIG5_TRAITS
        .iter()
        .map(|t| (t.to_string(), rng.gen_range(1..=10) as f64))
        .collect();
    TraitSet { scheme: TraitScheme::Big5, scores, provenance: Provenance::Random, range: (1.0, 10.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringItem {
    /// 1-based item number.
    pub item: usize,
    pub value: String,
    #[serde(default)]
    pub reverse: bool,
}

/// Maps the 20 instrument items onto the ten values, two items each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringMap {
    pub response_min: u32,
    pub response_max: u32,
    pub items: Vec<ScoringItem>,
}

impl Default for ScoringMap {
    fn default() -> Self {
        let items = (1..=SURVEY_ITEMS)
            .map(|item| ScoringItem {
                item,
                value: SCHWARTZ_VALUES[(item - 1) % SCHWARTZ_VALUES.len()].to_string(),
                reverse: false,
            })
            .collect();
        Self { response_min: 1, response_max: 6, items }
    }
}

impl ScoringMap {
    pub fn validate(&self) -> Result<(), String> {
        if self.response_min >= self.response_max {
            return Err("scoring map response_min must be below response_max".into());
        }
        if self.items.len() != SURVEY_ITEMS {
            return Err(format!("scoring map must list {SURVEY_ITEMS} items, got {}", self.items.len()));
        }
        let mut seen = [false; SURVEY_ITEMS];
        let mut per_value: BTreeMap<&str, usize> = BTreeMap::new();
        for entry in &self.items {
            if entry.item == 0 || entry.item > SURVEY_ITEMS || seen[entry.item - 1] {
                return Err(format!("scoring map item {} is out of range or repeated", entry.item));
            }
            seen[entry.item - 1] = true;
            if !SCHWARTZ_VALUES.contains(&entry.value.as_str()) {
                return Err(format!("scoring map item {} names unknown value `{}`", entry.item, entry.value));
            }
            *per_value.entry(entry.value.as_str()).or_default() += 1;
        }
        if let Some(v) = SCHWARTZ_VALUES.iter().find(|v| per_value.get(**v) != Some(&2)) {
            return Err(format!("value `{v}` must receive exactly 2 items"));
        }
        Ok(())
    }

    fn corrected(&self, item: usize, raw: u32) -> Result<f64, PersonaError> {
        if !(self.response_min..=self.response_max).contains(&raw) {
            return Err(PersonaError::OutOfRange {
                item,
                value: raw,
                min: self.response_min,
                max: self.response_max,
            });
        }
        let reverse = self.items.iter().any(|e| e.item == item && e.reverse);
        Ok(if reverse {
            (self.response_min + self.response_max - raw) as f64
        } else {
            raw as f64
        })
    }
}

/// Mean of each value's (reverse-corrected) items.
pub fn score_survey_responses(
    answers: &[Option<u32>],
    map: &ScoringMap,
) -> Result<BTreeMap<String, f64>, PersonaError> {
    let corrected = corrected_answers(answers, map)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for entry in &map.items {
        let slot = sums.entry(entry.value.clone()).or_default();
        slot.0 += corrected[entry.item - 1];
        slot.1 += 1;
    }
    Ok(sums.into_iter().map(|(v, (sum, n))| (v, sum / n as f64)).collect())
}

fn corrected_answers(answers: &[Option<u32>], map: &ScoringMap) -> Result<Vec<f64>, PersonaError> {
    if answers.len() < SURVEY_ITEMS {
        return Err(PersonaError::MissingItem(answers.len() + 1));
    }
    if answers.len() > SURVEY_ITEMS {
        return Err(PersonaError::WrongItemCount { expected: SURVEY_ITEMS, got: answers.len() });
    }
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let raw = a.ok_or(PersonaError::MissingItem(i + 1))?;
            map.corrected(i + 1, raw)
        })
        .collect()
}

/// Value scores minus the respondent's mean corrected response.
pub fn centered_scores(
    answers: &[Option<u32>],
    map: &ScoringMap,
) -> Result<BTreeMap<String, f64>, PersonaError> {
    let corrected = corrected_answers(answers, map)?;
    let mean = corrected.iter().sum::<f64>() / corrected.len() as f64;
    Ok(score_survey_responses(answers, map)?
        .into_iter()
        .map(|(v, s)| (v, s - mean))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: String,
    pub age: u32,
    pub gender: String,
    pub answers: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    pub respondents: Vec<Respondent>,
    pub scoring_map: ScoringMap,
}

impl SurveyDataset {
    /// Reads a comma-separated table with header
    /// `id,age,gender,q1,…,q20`; blank cells are unanswered items.
    pub fn from_csv(text: &str, scoring_map: ScoringMap) -> Result<Self, PersonaError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| PersonaError::Dataset(e.to_string()))?.clone();
        if headers.len() != 3 + SURVEY_ITEMS {
            return Err(PersonaError::Dataset(format!(
                "expected {} columns (id, age, gender, q1..q20), got {}",
                3 + SURVEY_ITEMS,
                headers.len()
            )));
        }
        let mut respondents = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| PersonaError::Dataset(e.to_string()))?;
            let bad = |what: &str| PersonaError::Dataset(format!("row {}: bad {what}", row + 1));
            let age = record[1].parse().map_err(|_| bad("age"))?;
            let answers = (3..3 + SURVEY_ITEMS)
                .map(|c| match &record[c] {
                    "" => Ok(None),
                    cell => cell.parse().map(Some).map_err(|_| bad(&format!("q{}", c - 2))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            respondents.push(Respondent {
                id: record[0].to_string(),
                age,
                gender: record[2].to_string(),
                answers,
            });
        }
        Ok(Self { respondents, scoring_map })
    }

    pub fn load(path: impl AsRef<Path>, scoring_map: ScoringMap) -> Result<Self, PersonaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PersonaError::Dataset(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text, scoring_map)
    }
}

/// Index of the bucket holding `age`; ages under the first edge share `None`.
pub fn age_bucket(age: u32, bins: &[u32]) -> Option<usize> {
    bins.iter().rposition(|&edge| age >= edge)
}

pub fn bucket_label(bucket: Option<usize>, bins: &[u32]) -> String {
    match bucket {
        None => format!("under {}", bins.first().copied().unwrap_or(0)),
        Some(i) if i + 1 < bins.len() => format!("{}-{}", bins[i], bins[i + 1] - 1),
        Some(i) => format!("{}+", bins[i]),
    }
}

/// Draws one respondent uniformly from the matching (age bucket, gender)
/// cell and returns their scored values.
pub fn sample_trait_set<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    age: u32,
    gender: &str,
    age_bins: &[u32],
    ipsatize: bool,
    rng: &mut R,
) -> Result<TraitSet, PersonaError> {
    if dataset.respondents.is_empty() {
        return Err(PersonaError::EmptyDataset);
    }
    let bucket = age_bucket(age, age_bins);
    let cell: Vec<&Respondent> = dataset
        .respondents
        .iter()
        .filter(|r| age_bucket(r.age, age_bins) == bucket && r.gender.eq_ignore_ascii_case(gender))
        .collect();
    if cell.is_empty() {
        return Err(PersonaError::EmptyCell {
            bucket: bucket_label(bucket, age_bins),
            gender: gender.to_string(),
        });
    }
    let chosen = cell[rng.gen_range(0..cell.len())];
    let map = &dataset.scoring_map;
    let (scores, range) = if ipsatize {
        let span = (map.response_max - map.response_min) as f64;
        (centered_scores(&chosen.answers, map)?, (-span, span))
    } else {
        (
            score_survey_responses(&chosen.answers, map)?,
            (map.response_min as f64, map.response_max as f64),
        )
    };
    Ok(TraitSet {
        scheme: TraitScheme::Schwartz,
        scores,
        provenance: Provenance::Sampled(chosen.id.clone()),
        range,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormativeMemories {
    pub backstory: String,
    pub memories: Vec<MemoryRecord>,
}

/// Identity, goal, traits and context lines shared by every prompt about
/// this agent.
pub fn describe_persona(spec: &AgentSpec, traits: &TraitSet, backstory: Option<&str>) -> String {
    let mut out = format!(
        "{} is a {}-year-old {}.\nPersonality ({}): {}.\nGoal: {}",
        spec.name,
        spec.age,
        spec.gender,
        match traits.scheme {
            TraitScheme::Big5 => "Big Five traits, 1-10",
            TraitScheme::Schwartz => "Schwartz values",
        },
        traits.describe(),
        spec.goal
    );
    if let Some(proposal) = &spec.policy_proposal {
        out.push_str("\nCampaign proposal: ");
        out.push_str(proposal);
    }
    for line in &spec.extra_context {
        out.push('\n');
        out.push_str(line);
    }
    if let Some(story) = backstory {
        out.push_str("\nBackstory: ");
        out.push_str(story);
    }
    out
}

pub const ANECDOTE_CHARS: usize = 1200;
pub const BACKSTORY_CHARS: usize = 2000;

/// Generates anecdotes, summarizes them into a backstory, and lays out all
/// formative memories on yearly timestamps ending before `start`.
///
/// `spec` is expected with placeholders already resolved; `shared_context`
/// is appended to the memories verbatim.
pub fn generate_formative_memories(
    spec: &AgentSpec,
    traits: &TraitSet,
    shared_context: &[String],
    num_anecdotes: usize,
    start: NaiveDateTime,
    llm: &dyn LlmBackend,
) -> Result<FormativeMemories, LlmError> {
    let persona = describe_persona(spec, traits, None);
    let count = num_anecdotes.max(1);
    let mut anecdotes = Vec::with_capacity(count);
    for i in 0..count {
        let at_age = (spec.age as usize * (i + 1) / (count + 1)).max(5).to_string();
        let prompt = prompts::fill(
            prompts::ANECDOTE,
            &[
                ("persona", &persona),
                ("name", &spec.name),
                ("anecdote_age", &at_age),
                ("index", &(i + 1).to_string()),
                ("count", &count.to_string()),
            ],
        );
        let req = CompletionRequest::new(PromptKind::Anecdote, &spec.name, prompt, ANECDOTE_CHARS);
        anecdotes.push(llm.complete(&req)?);
    }

    let prompt = prompts::fill(
        prompts::BACKSTORY,
        &[("persona", &persona), ("name", &spec.name), ("anecdotes", &prompts::bullets(&anecdotes))],
    );
    let req = CompletionRequest::new(PromptKind::Backstory, &spec.name, prompt, BACKSTORY_CHARS);
    let backstory = llm.complete(&req)?;

    let mut texts: Vec<String> = anecdotes.into_iter().filter(|a| !a.trim().is_empty()).collect();
    texts.extend(spec.extra_context.iter().cloned());
    if spec.role == AgentRole::Candidate {
        if let Some(proposal) = &spec.policy_proposal {
            if !shared_context.iter().any(|block| block.contains(proposal.as_str())) {
                texts.push(format!("{} campaigns on {}", spec.name, proposal));
            }
        }
    }
    texts.extend(shared_context.iter().cloned());

    let total = texts.len() as i64;
    let memories = texts
        .into_iter()
        .enumerate()
        .filter(|(_, t)| !t.trim().is_empty())
        .map(|(i, text)| {
            let years_before = total - i as i64;
            MemoryRecord::new(start - Duration::days(365 * years_before), text, MemoryTag::Formative)
        })
        .collect();
    Ok(FormativeMemories { backstory, memories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Recording, ScriptedBackend, ScriptedRule, ScriptedRules};
    use crate::rng::stream;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn same(r: u32) -> Vec<Option<u32>> {
        vec![Some(r); SURVEY_ITEMS]
    }

    #[test]
    fn constant_answers_score_constant() {
        let map = ScoringMap::default();
        for r in 1..=6 {
            let scores = score_survey_responses(&same(r), &map).unwrap();
            assert_eq!(scores.len(), 10);
            assert!(scores.values().all(|s| *s == r as f64));
        }
    }

    #[test]
    fn benevolence_is_mean_of_its_two_items() {
        let map = ScoringMap::default();
        let items: Vec<usize> =
            map.items.iter().filter(|e| e.value == "benevolence").map(|e| e.item).collect();
        assert_eq!(items, vec![9, 19]);
        let mut answers = same(2);
        answers[8] = Some(5);
        answers[18] = Some(3);
        let scores = score_survey_responses(&answers, &map).unwrap();
        assert_eq!(scores["benevolence"], 4.0);
        assert_eq!(scores["universalism"], 2.0);
    }

    #[test]
    fn reverse_items_are_corrected() {
        let mut map = ScoringMap::default();
        map.items[8].reverse = true; // item 9, benevolence
        let mut answers = same(2);
        answers[8] = Some(5); // reversed: 1 + 6 - 5 = 2
        answers[18] = Some(4);
        assert_eq!(score_survey_responses(&answers, &map).unwrap()["benevolence"], 3.0);
    }

    #[test]
    fn nineteen_answers_is_missing_item() {
        let answers = vec![Some(3); 19];
        assert_eq!(score_survey_responses(&answers, &ScoringMap::default()), Err(PersonaError::MissingItem(20)));
        let mut blank = same(3);
        blank[4] = None;
        assert_eq!(score_survey_responses(&blank, &ScoringMap::default()), Err(PersonaError::MissingItem(5)));
    }

    #[test]
    fn out_of_range_response() {
        let mut answers = same(3);
        answers[0] = Some(7);
        assert!(matches!(
            score_survey_responses(&answers, &ScoringMap::default()),
            Err(PersonaError::OutOfRange { item: 1, value: 7, .. })
        ));
    }

    #[test]
    fn scoring_is_invariant_to_swapping_items_of_one_value() {
        let map = ScoringMap::default();
        let answers: Vec<_> = (0..SURVEY_ITEMS).map(|i| Some((i % 6) as u32 + 1)).collect();
        for pair in SCHWARTZ_VALUES {
            let idx: Vec<usize> = map.items.iter().filter(|e| e.value == pair).map(|e| e.item - 1).collect();
            let mut swapped = answers.clone();
            swapped.swap(idx[0], idx[1]);
            assert_eq!(
                score_survey_responses(&answers, &map).unwrap(),
                score_survey_responses(&swapped, &map).unwrap()
            );
        }
    }

    #[test]
    fn centered_scores_sum_to_zero() {
        let map = ScoringMap::default();
        let answers: Vec<_> = (0..SURVEY_ITEMS).map(|i| Some((i * 7 % 6) as u32 + 1)).collect();
        let total: f64 = centered_scores(&answers, &map).unwrap().values().sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn scoring_map_validation() {
        ScoringMap::default().validate().unwrap();
        let mut map = ScoringMap::default();
        map.items[0].value = "power".into();
        assert!(map.validate().unwrap_err().contains("exactly 2 items"));
        let mut map = ScoringMap::default();
        map.items[0].item = 2;
        assert!(map.validate().unwrap_err().contains("repeated"));
    }

    fn fixture() -> SurveyDataset {
        let mut csv = String::from("id,age,gender");
        for i in 1..=SURVEY_ITEMS {
            csv.push_str(&format!(",q{i}"));
        }
        csv.push('\n');
        let rows = [("r1", 34, "female", 1), ("r2", 31, "female", 2), ("r3", 38, "Female", 3), ("r4", 45, "female", 4), ("r5", 33, "male", 5)];
        for (id, age, gender, r) in rows {
            csv.push_str(&format!("{id},{age},{gender}"));
            for _ in 0..SURVEY_ITEMS {
                csv.push_str(&format!(",{r}"));
            }
            csv.push('\n');
        }
        SurveyDataset::from_csv(&csv, ScoringMap::default()).unwrap()
    }

    const BINS: [u32; 6] = [18, 30, 40, 50, 60, 70];

    #[test]
    fn age_buckets_are_decades() {
        assert_eq!(age_bucket(17, &BINS), None);
        assert_eq!(age_bucket(18, &BINS), Some(0));
        assert_eq!(age_bucket(29, &BINS), Some(0));
        assert_eq!(age_bucket(30, &BINS), Some(1));
        assert_eq!(age_bucket(95, &BINS), Some(5));
        assert_eq!(bucket_label(Some(1), &BINS), "30-39");
        assert_eq!(bucket_label(Some(5), &BINS), "70+");
    }

    #[test]
    fn singleton_cell_returns_that_respondent() {
        let ds = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_trait_set(&ds, 47, "female", &BINS, false, &mut rng).unwrap();
        assert_eq!(t.provenance, Provenance::Sampled("r4".into()));
        assert!(t.scores.values().all(|s| *s == 4.0));
        t.validate().unwrap();
    }

    #[test]
    fn seeded_draw_is_reproducible() {
        let ds = fixture();
        let pick = |seed| {
            let mut rng = stream(seed, "traits");
            sample_trait_set(&ds, 35, "female", &BINS, false, &mut rng).unwrap().provenance
        };
        for seed in 0..20 {
            assert_eq!(pick(seed), pick(seed));
            assert!(matches!(pick(seed), Provenance::Sampled(ref id) if ["r1", "r2", "r3"].contains(&id.as_str())));
        }
    }

    #[test]
    fn empty_cell_is_reported_not_widened() {
        let ds = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_trait_set(&ds, 62, "male", &BINS, false, &mut rng),
            Err(PersonaError::EmptyCell { bucket: "60-69".into(), gender: "male".into() })
        );
    }

    #[test]
    fn draws_are_uniform_over_the_cell() {
        let ds = fixture();
        let trials = 30_000;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..trials {
            if let Provenance::Sampled(id) = sample_trait_set(&ds, 30, "female", &BINS, false, &mut rng).unwrap().provenance {
                *counts.entry(id).or_default() += 1;
            }
        }
        let p = 1.0 / 3.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts.len(), 3);
        for (id, c) in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * sigma, "{id}: {c}");
        }
    }

    #[test]
    fn centered_sampling_declares_symmetric_range() {
        let ds = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_trait_set(&ds, 45, "female", &BINS, true, &mut rng).unwrap();
        assert_eq!(t.range, (-5.0, 5.0));
        assert!(t.scores.values().all(|s| *s == 0.0));
        t.validate().unwrap();
    }

    #[test]
    fn random_big5_is_deterministic_and_structured() {
        let a = random_big5(&mut stream(5, "t"));
        let b = random_big5(&mut stream(5, "t"));
        assert_eq!(a, b);
        assert_eq!(a.scheme, TraitScheme::Big5);
        assert_eq!(a.scores.len(), 5);
        assert_eq!(a.provenance, Provenance::Random);
        a.validate().unwrap();
    }

    #[test]
    fn random_big5_mean_is_five_and_a_half() {
        // Uniform on 1..=10: mean 5.5, variance (10² − 1) / 12 = 8.25.
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sums = [0.0; 5];
        for _ in 0..n {
            let t = random_big5(&mut rng);
            for (i, name) in BIG5_TRAITS.iter().enumerate() {
                let s = t.scores[*name];
                assert!((1.0..=10.0).contains(&s) && s.fract() == 0.0);
                sums[i] += s;
            }
        }
        let sigma_mean = (8.25f64 / n as f64).sqrt();
        for (i, sum) in sums.iter().enumerate() {
            let mean = sum / n as f64;
            assert!((mean - 5.5).abs() < 3.0 * sigma_mean, "{}: {mean}", BIG5_TRAITS[i]);
        }
    }

    fn scripted(anecdote: &str) -> ScriptedBackend {
        let mut rules = vec![
            ScriptedRule::fallback(PromptKind::Anecdote, &[anecdote]),
            ScriptedRule::fallback(PromptKind::Backstory, &["A quiet life by the river."]),
        ];
        rules.extend(PromptKind::ALL.iter().map(|k| ScriptedRule::fallback(*k, &["x"])));
        ScriptedBackend::new(ScriptedRules { rules }).unwrap()
    }

    fn spec(role: AgentRole) -> AgentSpec {
        AgentSpec {
            name: "Rosa Delgado".into(),
            gender: "female".into(),
            age: 41,
            role,
            goal: "vote".into(),
            extra_context: vec!["She works at the mill.".into()],
            policy_proposal: (role == AgentRole::Candidate).then(|| "build a new library".to_string()),
            base_rate: None,
            trait_mode: crate::scenario::TraitMode::Big5Random,
        }
    }

    fn start() -> NaiveDateTime {
        NaiveDateTime::parse_from_str("2024-10-15T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    #[test]
    fn formative_memories_echo_scripted_text_and_shared_context() {
        let llm = scripted("Rosa won the spelling bee.");
        let traits = random_big5(&mut stream(1, "t"));
        let shared: Vec<String> = (1..=4).map(|i| format!("shared block {i}")).collect();
        let fm = generate_formative_memories(&spec(AgentRole::Voter), &traits, &shared, 3, start(), &llm).unwrap();
        assert_eq!(fm.backstory, "A quiet life by the river.");
        assert_eq!(fm.memories.iter().filter(|m| m.text == "Rosa won the spelling bee.").count(), 3);
        for block in &shared {
            assert!(fm.memories.iter().any(|m| m.text.contains(block.as_str())));
        }
        assert!(fm.memories.len() >= 4);
        assert!(fm.memories.iter().all(|m| m.timestamp < start() && m.has_tag(MemoryTag::Formative)));
        assert!(fm.memories.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn candidate_remembers_own_proposal() {
        let llm = scripted("a");
        let traits = random_big5(&mut stream(1, "t"));
        let fm = generate_formative_memories(&spec(AgentRole::Candidate), &traits, &[], 2, start(), &llm).unwrap();
        assert!(fm.memories.iter().any(|m| m.text.contains("build a new library")));
    }

    #[test]
    fn formative_generation_is_reproducible() {
        let run = || {
            let llm = Recording::new(scripted("a"));
            let traits = random_big5(&mut stream(8, "t"));
            let fm = generate_formative_memories(&spec(AgentRole::Voter), &traits, &["s".into()], 3, start(), &llm).unwrap();
            (serde_json::to_string(&fm).unwrap(), serde_json::to_string(&llm.transcript()).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn anecdote_prompt_carries_persona() {
        let llm = Recording::new(scripted("a"));
        let traits = random_big5(&mut stream(1, "t"));
        generate_formative_memories(&spec(AgentRole::Voter), &traits, &[], 1, start(), &llm).unwrap();
        let t = llm.transcript();
        assert_eq!(t.len(), 2);
        assert!(t[0].request.prompt_text.contains("Rosa Delgado is a 41-year-old female"));
        assert!(t[0].request.prompt_text.contains("openness"));
        assert!(t[1].request.prompt_text.contains("backstory"));
    }
}
