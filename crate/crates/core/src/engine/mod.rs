//! Episode loop: setup, scheduled app sessions with a parallel decide phase,
//! ordered effects, surveys, analytics and checkpoints.

mod checkpoint;
mod manifest;
mod schedule;

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{Duration, NaiveDateTime};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::memory::{MemoryStore, MemoryTag, RetrievalWeights};
use crate::agent::{apply_actions, decide_session, ActionOutcome, AgentState, SessionContext, SessionPlan};
use crate::llm::{BufferedLlm, LlmBackend, TranscriptEntry};
use crate::measurement::{aggregate, survey_agent, survey_memory, AnalyticsSnapshot, ShareFilter, SurveyRecord};
use crate::persona::{
    describe_persona, generate_formative_memories, random_big5, sample_trait_set, SurveyDataset, TraitSet,
};
use crate::platform::{
    init_follow_graph, post_introductions, provision_accounts, AccountId, Emulator, Platform, PlatformEvent, Toot,
};
use crate::rng::stream;
use crate::scenario::{AgentRole, AgentSpec, ScenarioConfig, ScenarioError, TraitMode};
use crate::SimError;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use manifest::{verify_manifest, write_outputs, ArtifactEntry, RunManifest, MANIFEST_FILE};
pub use schedule::{activity, activity_stream, build_schedule, draw_slots, is_active, Activity, EpisodeSchedule};

/// One app opening and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub episode: u32,
    pub agent: String,
    pub scheduled: bool,
    pub stochastic: bool,
    pub fell_back: bool,
    pub outcomes: Vec<ActionOutcome>,
}

/// Everything a run produces; also the checkpoint payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub backend_identity: String,
    pub platform_identity: String,
    /// Counters and similar state the backend needs to continue identically.
    pub backend_state: Option<serde_json::Value>,
    /// First episode not yet run; equals `episodes_per_day` when complete.
    pub next_episode: u32,
    pub agents: Vec<AgentState>,
    pub events: Vec<PlatformEvent>,
    pub sessions: Vec<SessionRecord>,
    pub surveys: Vec<SurveyRecord>,
    pub analytics: Vec<AnalyticsSnapshot>,
    pub transcript: Vec<TranscriptEntry>,
}

impl RunArtifacts {
    pub fn is_complete(&self) -> bool {
        self.next_episode >= self.config.episodes_per_day
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `runtime.workers`.
    pub workers: Option<usize>,
    /// Rewritten after setup and after every episode.
    pub checkpoint: Option<PathBuf>,
    /// Return once this many episodes are complete, as if interrupted.
    pub stop_after: Option<u32>,
}

fn worker_count(config: &ScenarioConfig, opts: &RunOptions) -> usize {
    opts.workers
        .or(config.runtime.workers)
        .unwrap_or_else(|| {
            let cpus = std::thread::available_parallelism().map_or(4, usize::from);
            config.agents.len().min(cpus).min(16)
        })
        .max(1)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, SimError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("mastosim-worker-{i}"))
        .build()
        .map_err(|e| SimError::Internal(format!("worker pool: {e}")))
}

fn absorb(transcript: &mut Vec<TranscriptEntry>, entries: Vec<TranscriptEntry>) {
    for mut entry in entries {
        entry.seq = transcript.len() as u64;
        transcript.push(entry);
    }
}

/// The spec with every placeholder resolved.
fn render_spec(config: &ScenarioConfig, spec: &AgentSpec) -> AgentSpec {
    AgentSpec {
        goal: config.render(&spec.goal),
        extra_context: spec.extra_context.iter().map(|c| config.render(c)).collect(),
        policy_proposal: spec.policy_proposal.as_ref().map(|p| config.render(p)),
        ..spec.clone()
    }
}

fn draw_traits(config: &ScenarioConfig, specs: &[AgentSpec]) -> Result<Vec<TraitSet>, SimError> {
    let dataset = if specs.iter().any(|s| s.trait_mode == TraitMode::SchwartzSampled) {
        let path = config.dataset_path().ok_or_else(|| {
            ScenarioError::Invalid("schwartz_sampled agents need persona.dataset".into())
        })?;
        Some(SurveyDataset::load(path, config.persona.scoring_map.clone())?)
    } else {
        None
    };
    specs
        .iter()
        .map(|spec| {
            let mut rng = stream(config.seed, &format!("traits/{}", spec.name));
            Ok(match (spec.trait_mode, &dataset) {
                (TraitMode::SchwartzSampled, Some(ds)) => sample_trait_set(
                    ds,
                    spec.age,
                    &spec.gender,
                    &config.persona.age_bins,
                    config.persona.ipsatize,
                    &mut rng,
                )?,
                _ => random_big5(&mut rng),
            })
        })
        .collect()
}

fn episode_time(config: &ScenarioConfig, episode: u32) -> NaiveDateTime {
    config.start_datetime() + Duration::minutes(i64::from(episode) * i64::from(config.episode_minutes))
}

/// Provisioning, personas, follow graph and introductions.
fn setup(
    config: &ScenarioConfig,
    llm: &dyn LlmBackend,
    platform: &mut dyn Platform,
    workers: &rayon::ThreadPool,
) -> Result<RunArtifacts, SimError> {
    let start = config.start_datetime();
    platform.set_clock(-1, start);
    let specs: Vec<AgentSpec> = config.agents.iter().map(|a| render_spec(config, a)).collect();
    let bindings = provision_accounts(platform, &specs)?;
    info!("provisioned {} accounts", bindings.len());

    let traits = draw_traits(config, &specs)?;
    let shared: Vec<String> = config.shared_context.iter().map(|s| config.render(s)).collect();
    let generated: Vec<_> = workers.install(|| {
        specs
            .par_iter()
            .zip(&traits)
            .map(|(spec, t)| {
                let buf = BufferedLlm::new(llm);
                let r = generate_formative_memories(spec, t, &shared, config.runtime.num_anecdotes, start, &buf);
                (r, buf.into_entries())
            })
            .collect()
    });
    let mut transcript = Vec::new();
    let mut agents = Vec::with_capacity(specs.len());
    for ((spec, traits), (formative, entries)) in specs.into_iter().zip(traits).zip(generated) {
        absorb(&mut transcript, entries);
        let formative = formative?;
        let mut memories = MemoryStore::new();
        for m in formative.memories {
            memories.push(m)?;
        }
        let persona = describe_persona(&spec, &traits, Some(&formative.backstory));
        let account = bindings[&spec.name].clone();
        agents.push(AgentState {
            spec,
            traits,
            backstory: formative.backstory,
            persona,
            account,
            memories,
            opinions: BTreeMap::new(),
        });
    }
    info!("generated {} personas", agents.len());

    let ids: Vec<AccountId> = agents.iter().map(|a| a.account.clone()).collect();
    let candidates: Vec<AccountId> =
        agents.iter().filter(|a| a.role() == AgentRole::Candidate).map(|a| a.account.clone()).collect();
    let graph = init_follow_graph(
        &ids,
        &candidates,
        config.graph.p1,
        config.graph.p2,
        config.graph.one_way_mode,
        &mut stream(config.seed, "graph"),
    );
    for (from, to) in &graph.edges {
        platform.follow(from, to)?;
    }
    info!("initial follow graph has {} edges", graph.edges.len());

    let intro_input: Vec<(String, String, AccountId)> =
        agents.iter().map(|a| (a.name().to_string(), a.persona.clone(), a.account.clone())).collect();
    let buf = BufferedLlm::new(llm);
    let intros = post_introductions(platform, &intro_input, &buf);
    absorb(&mut transcript, buf.into_entries());
    for (agent, toot) in agents.iter_mut().zip(intros?) {
        agent.remember(start, format!("{} introduced themselves on Mastodon: {}", agent.name(), toot.text), MemoryTag::Platform)?;
    }

    Ok(RunArtifacts {
        config: config.clone(),
        backend_identity: llm.identity(),
        platform_identity: platform.identity(),
        backend_state: llm.export_state(),
        next_episode: 0,
        agents,
        events: platform.state().events().to_vec(),
        sessions: Vec::new(),
        surveys: Vec::new(),
        analytics: Vec::new(),
        transcript,
    })
}

fn session_context(config: &ScenarioConfig, now: NaiveDateTime) -> SessionContext {
    let candidates: Vec<(String, String)> = config
        .candidates()
        .into_iter()
        .map(|c| (c.name.clone(), c.policy_proposal.as_deref().map(|p| config.render(p)).unwrap_or_default()))
        .collect();
    let favored = config
        .agents
        .iter()
        .find(|a| a.role == AgentRole::Malicious)
        .and_then(|m| {
            let goal = config.render(&m.goal);
            candidates.iter().find(|(name, _)| goal.contains(name.as_str())).map(|(n, _)| n.clone())
        });
    let rt = &config.runtime;
    SessionContext {
        now,
        candidates,
        favored,
        usage: config.mastodon_usage_instructions.iter().map(|s| config.render(s)).collect::<Vec<_>>().join("\n"),
        feed_window: rt.feed_window,
        max_actions: rt.max_actions_per_session,
        retrieval_k: rt.retrieval_k,
        weights: RetrievalWeights { recency: rt.recency_weight, relevance: rt.relevance_weight },
    }
}

fn run_episode(
    art: &mut RunArtifacts,
    episode: u32,
    schedule: &EpisodeSchedule,
    llm: &dyn LlmBackend,
    platform: &mut dyn Platform,
    workers: &rayon::ThreadPool,
) -> Result<(), SimError> {
    let config = art.config.clone();
    let now = episode_time(&config, episode);
    platform.set_clock(i64::from(episode), now);

    let activity: Vec<Activity> = art
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| schedule::activity(schedule, i, episode, &mut activity_stream(config.seed, a.name(), episode)))
        .collect();
    let mut feeds: Vec<Vec<Toot>> = Vec::with_capacity(art.agents.len());
    for (agent, act) in art.agents.iter().zip(&activity) {
        feeds.push(if act.active() { platform.home_timeline(&agent.account, config.runtime.feed_window)? } else { Vec::new() });
    }
    let snapshot = platform.state().clone();
    let ctx = session_context(&config, now);

    let decided: Vec<(usize, Result<SessionPlan, crate::agent::AgentError>, Vec<TranscriptEntry>)> = workers.install(|| {
        art.agents
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| activity[*i].active())
            .map(|(i, agent)| {
                let buf = BufferedLlm::new(llm);
                let plan = decide_session(agent, &ctx, &feeds[i], &snapshot, &buf);
                (i, plan, buf.into_entries())
            })
            .collect()
    });
    let mut plans = Vec::with_capacity(decided.len());
    for (i, plan, entries) in decided {
        absorb(&mut art.transcript, entries);
        plans.push((i, plan?));
    }

    for (i, plan) in plans {
        let agent = &mut art.agents[i];
        let outcomes = apply_actions(platform, agent, &plan.actions, &feeds[i], now)?;
        debug!("episode {episode}: {} did {} action(s)", agent.name(), outcomes.len());
        art.sessions.push(SessionRecord {
            episode,
            agent: agent.name().to_string(),
            scheduled: activity[i].scheduled,
            stochastic: activity[i].stochastic,
            fell_back: plan.fell_back,
            outcomes,
        });
    }

    let candidates = config.candidate_names();
    let rt = &config.runtime;
    let weights = RetrievalWeights { recency: rt.recency_weight, relevance: rt.relevance_weight };
    let polled: Vec<(SurveyRecord, Vec<TranscriptEntry>)> = workers.install(|| {
        art.agents
            .par_iter()
            .map(|agent| {
                let buf = BufferedLlm::new(llm);
                let record = survey_agent(agent, episode, &candidates, rt.retrieval_k, weights, &buf);
                (record, buf.into_entries())
            })
            .collect()
    });
    let mut records = Vec::with_capacity(polled.len());
    for (record, entries) in polled {
        absorb(&mut art.transcript, entries);
        records.push(record);
    }
    if rt.survey_to_memory {
        for (agent, record) in art.agents.iter_mut().zip(&records) {
            let (text, tag) = survey_memory(record);
            agent.remember(now, text, tag)?;
        }
    }

    let filter = ShareFilter {
        exclude_candidates: rt.exclude_candidates_from_share,
        include_malicious: rt.include_malicious_in_share,
    };
    let active_accounts =
        art.agents.iter().zip(&activity).filter(|(_, a)| a.active()).map(|(g, _)| g.account.clone()).collect();
    art.analytics.push(aggregate(&records, episode, &candidates, filter, platform.state(), active_accounts));
    art.surveys.extend(records);
    let known = art.events.len();
    art.events.extend_from_slice(&platform.state().events()[known..]);
    art.backend_state = llm.export_state();
    art.next_episode = episode + 1;
    Ok(())
}

fn run_episodes(
    mut art: RunArtifacts,
    llm: &dyn LlmBackend,
    platform: &mut dyn Platform,
    opts: &RunOptions,
    workers: &rayon::ThreadPool,
) -> Result<RunArtifacts, SimError> {
    let schedule = build_schedule(&art.config)?;
    while !art.is_complete() {
        if opts.stop_after.is_some_and(|stop| art.next_episode >= stop) {
            info!("stopping after episode {}", art.next_episode);
            return Ok(art);
        }
        let episode = art.next_episode;
        run_episode(&mut art, episode, &schedule, llm, platform, workers)?;
        info!("episode {episode} done");
        if let Some(path) = &opts.checkpoint {
            write_checkpoint(path, &art)?;
        }
    }
    Ok(art)
}

/// Runs a scenario from scratch on `platform`.
pub fn run_simulation(
    config: &ScenarioConfig,
    llm: &dyn LlmBackend,
    platform: &mut dyn Platform,
    opts: &RunOptions,
) -> Result<RunArtifacts, SimError> {
    config.validate()?;
    build_schedule(config)?;
    let workers = pool(worker_count(config, opts))?;
    let art = setup(config, llm, platform, &workers)?;
    if let Some(path) = &opts.checkpoint {
        write_checkpoint(path, &art)?;
    }
    run_episodes(art, llm, platform, opts, &workers)
}

/// Continues a checkpointed run on a fresh emulator rebuilt from its log.
/// `llm` must have the identity recorded in the checkpoint.
pub fn resume(art: RunArtifacts, llm: &dyn LlmBackend, opts: &RunOptions) -> Result<RunArtifacts, SimError> {
    if art.backend_identity != llm.identity() {
        return Err(SimError::Checkpoint(format!(
            "checkpoint was made with backend `{}`, not `{}`",
            art.backend_identity,
            llm.identity()
        )));
    }
    let mut emulator = Emulator::from_events(&art.events)?;
    if art.platform_identity != emulator.identity() {
        return Err(SimError::Checkpoint(format!(
            "runs on `{}` cannot be resumed; only emulator runs can",
            art.platform_identity
        )));
    }
    if let Some(state) = &art.backend_state {
        llm.import_state(state)?;
    }
    let workers = pool(worker_count(&art.config, opts))?;
    run_episodes(art, llm, &mut emulator, opts, &workers)
}
