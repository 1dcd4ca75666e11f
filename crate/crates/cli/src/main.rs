use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use mastosim::engine::{
    read_checkpoint, resume, run_simulation, write_outputs, RunArtifacts, RunManifest, RunOptions,
    MANIFEST_FILE,
};
use mastosim::llm::{LlmBackend, LlmError, LlmParams, RemoteBackend, ScriptedBackend};
use mastosim::measurement::{ExportError, ExportFormat};
use mastosim::platform::{sample_graph_stats, Emulator, MastodonClient, Platform};
use mastosim::scenario::{builtin_storhampton_scenario, load_scenario, ExperimentVariant, OneWayMode, ScenarioConfig};
use mastosim::SimError;

const CHECKPOINT_FILE: &str = "checkpoint.json";
const RULES_COPY: &str = "rules.toml";

/// Exit codes.
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PLATFORM: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser)]
#[command(name = "mastosim", version, about = "Election simulation with LLM agents on a Mastodon-compatible platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from scratch.
    Run(RunArgs),
    /// Continue a checkpointed run (emulator runs only).
    Resume(ResumeArgs),
    /// Re-export artifacts from a checkpoint.
    Export(ExportArgs),
    /// Load and validate a scenario file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare sampled follow-graph statistics with their expectations.
    GraphStats(GraphStatsArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with_all = ["variant", "agents"])]
    config: Option<PathBuf>,
    /// Built-in scenario variant, used when no --config is given.
    #[arg(long, value_enum, default_value = "control")]
    variant: VariantArg,
    /// Number of agents in the built-in scenario.
    #[arg(long, default_value_t = 20)]
    agents: usize,
    /// Overrides the scenario's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Control,
    Bias,
    Malicious,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlatformArg {
    Emulator,
    Mastodon,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendArg,
    /// Scripted rules TOML (required with the scripted backend).
    #[arg(long)]
    rules: Option<PathBuf>,
    /// `mastodon` reads MASTODON_BASE_URL and MASTODON_ACCESS_TOKENS.
    #[arg(long, value_enum, default_value = "emulator")]
    platform: PlatformArg,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated export formats.
    #[arg(long, value_delimiter = ',', default_value = "survey,analytics,gexf,svg,events,transcript")]
    formats: Vec<String>,
    /// Stop once this many episodes are complete.
    #[arg(long, hide = true)]
    stop_after: Option<u32>,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scripted rules; defaults to the copy saved next to the checkpoint.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "survey,analytics,gexf,svg,events,transcript")]
    formats: Vec<String>,
    #[arg(long, hide = true)]
    stop_after: Option<u32>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "survey,analytics,gexf,svg,events,transcript")]
    formats: Vec<String>,
}

#[derive(Args)]
struct GraphStatsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500)]
    seeds: u32,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        use mastosim::agent::AgentError;
        let code = match &e {
            SimError::Scenario(_) | SimError::Persona(_) => EXIT_CONFIG,
            SimError::Llm(_) | SimError::Agent(AgentError::Llm(_)) => EXIT_BACKEND,
            SimError::Platform(_) | SimError::Io { .. } | SimError::Export(_) | SimError::Checkpoint(_) => EXIT_PLATFORM,
            SimError::Memory(_) | SimError::Agent(_) | SimError::Internal(_) => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        let code = match e {
            ExportError::UnknownFormat(_) => EXIT_CONFIG,
            ExportError::Io { .. } => EXIT_PLATFORM,
        };
        Failure::new(code, e.to_string())
    }
}

fn backend_failure(e: LlmError) -> Failure {
    let code = match e {
        LlmError::InvalidRules(_) => EXIT_CONFIG,
        _ => EXIT_BACKEND,
    };
    Failure::new(code, e.to_string())
}

fn load_config(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => load_scenario(path).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?,
        None => {
            if args.agents < 3 {
                return Err(Failure::new(EXIT_CONFIG, "--agents must be at least 3"));
            }
            let variant = match args.variant {
                VariantArg::Control => ExperimentVariant::Control,
                VariantArg::Bias => ExperimentVariant::Bias,
                VariantArg::Malicious => ExperimentVariant::Malicious,
            };
            builtin_storhampton_scenario(variant, args.agents)
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    Ok(config)
}

fn parse_formats(names: &[String]) -> Result<Vec<ExportFormat>, Failure> {
    names.iter().map(|n| n.parse::<ExportFormat>().map_err(Failure::from)).collect()
}

fn scripted(path: &Path) -> Result<ScriptedBackend, Failure> {
    let backend = ScriptedBackend::from_file(path).map_err(backend_failure)?;
    backend.rules().validate().map_err(backend_failure)?;
    Ok(backend)
}

fn remote(params: &LlmParams) -> Result<RemoteBackend, Failure> {
    RemoteBackend::from_env(params.clone()).map_err(backend_failure)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::new(EXIT_PLATFORM, format!("cannot create {}: {e}", dir.display())))
}

/// Writes exports and the manifest for whatever the run reached. A failed
/// run falls back to its last checkpoint, or to a bare manifest.
fn finish(
    out: &Path,
    config: &ScenarioConfig,
    backend: &str,
    platform: &str,
    result: Result<RunArtifacts, SimError>,
    formats: &[ExportFormat],
) -> Result<(), Failure> {
    match result {
        Ok(art) => {
            let manifest = write_outputs(&art, out, formats, None)?;
            info!(
                "episodes {}..{} written to {} ({} artifacts)",
                manifest.start_episode,
                manifest.end_episode,
                out.display(),
                manifest.artifacts.len()
            );
            Ok(())
        }
        Err(e) => {
            let failure = Failure::from(e);
            match read_checkpoint(&out.join(CHECKPOINT_FILE)) {
                Ok(art) => {
                    if let Err(export) = write_outputs(&art, out, formats, Some(failure.message.clone())) {
                        warn!("could not export partial run: {export}");
                    }
                }
                Err(_) => {
                    let manifest = RunManifest {
                        config_hash: config.content_hash(),
                        seed: config.seed,
                        backend: backend.to_string(),
                        platform: platform.to_string(),
                        start_episode: 0,
                        end_episode: 0,
                        episodes_per_day: config.episodes_per_day,
                        complete: false,
                        error: Some(failure.message.clone()),
                        artifacts: Vec::new(),
                    };
                    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
                    if let Err(io) = std::fs::write(out.join(MANIFEST_FILE), text) {
                        warn!("could not write manifest: {io}");
                    }
                }
            }
            Err(failure)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_config(&args.scenario)?;
    let formats = parse_formats(&args.formats)?;
    let llm: Box<dyn LlmBackend> = match args.backend {
        BackendArg::Scripted => {
            let path = args
                .rules
                .as_ref()
                .ok_or_else(|| Failure::new(EXIT_CONFIG, "--rules is required with --backend scripted"))?;
            Box::new(scripted(path)?)
        }
        BackendArg::Remote => Box::new(remote(&config.llm)?),
    };
    let mut platform: Box<dyn Platform> = match args.platform {
        PlatformArg::Emulator => Box::new(Emulator::new()),
        PlatformArg::Mastodon => {
            Box::new(MastodonClient::from_env().map_err(|e| Failure::new(EXIT_PLATFORM, e.to_string()))?)
        }
    };
    create_dir(&args.out)?;
    if let (BackendArg::Scripted, Some(rules)) = (args.backend, &args.rules) {
        std::fs::copy(rules, args.out.join(RULES_COPY))
            .map_err(|e| Failure::new(EXIT_PLATFORM, format!("copying rules: {e}")))?;
    }
    let opts = RunOptions {
        workers: args.workers,
        checkpoint: Some(args.out.join(CHECKPOINT_FILE)),
        stop_after: args.stop_after,
    };
    info!("running {} agents with seed {} on {}", config.agents.len(), config.seed, llm.identity());
    let result = run_simulation(&config, llm.as_ref(), platform.as_mut(), &opts);
    finish(&args.out, &config, &llm.identity(), &platform.identity(), result, &formats)
}

fn cmd_resume(args: ResumeArgs) -> Result<(), Failure> {
    let formats = parse_formats(&args.formats)?;
    let art = read_checkpoint(&args.checkpoint)?;
    let dir = args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = args.out.clone().unwrap_or_else(|| dir.clone());
    let llm: Box<dyn LlmBackend> = if art.backend_identity.starts_with("scripted:") {
        let rules = args.rules.clone().unwrap_or_else(|| dir.join(RULES_COPY));
        Box::new(scripted(&rules)?)
    } else {
        Box::new(remote(&art.config.llm)?)
    };
    if art.is_complete() {
        info!("run already complete; nothing to resume");
    }
    create_dir(&out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    if checkpoint != args.checkpoint {
        std::fs::copy(&args.checkpoint, &checkpoint)
            .map_err(|e| Failure::new(EXIT_PLATFORM, format!("copying checkpoint: {e}")))?;
    }
    let opts = RunOptions { workers: args.workers, checkpoint: Some(checkpoint), stop_after: args.stop_after };
    let config = art.config.clone();
    let platform = art.platform_identity.clone();
    let result = resume(art, llm.as_ref(), &opts);
    finish(&out, &config, &llm.identity(), &platform, result, &formats)
}

fn cmd_export(args: ExportArgs) -> Result<(), Failure> {
    let formats = parse_formats(&args.formats)?;
    let art = read_checkpoint(&args.checkpoint)?;
    create_dir(&args.out)?;
    write_outputs(&art, &args.out, &formats, None)?;
    Ok(())
}

fn cmd_validate(config: &Path) -> Result<(), Failure> {
    let cfg = load_scenario(config).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    println!(
        "{}: ok ({} agents, {} candidates, {} episodes, seed {})",
        config.display(),
        cfg.agents.len(),
        cfg.candidates().len(),
        cfg.episodes_per_day,
        cfg.seed
    );
    Ok(())
}

fn cmd_graph_stats(args: GraphStatsArgs) -> Result<(), Failure> {
    if args.seeds == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--seeds must be at least 1"));
    }
    let config = load_config(&args.scenario)?;
    let candidates: Vec<usize> = config
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.role == mastosim::scenario::AgentRole::Candidate)
        .map(|(i, _)| i)
        .collect();
    let n = config.agents.len();
    let (p1, p2) = (config.graph.p1, config.graph.p2);
    let mode = config.graph.one_way_mode;
    let stats = sample_graph_stats(n, &candidates, p1, p2, mode, config.seed, args.seeds);

    let (recip, one_way) = match mode {
        OneWayMode::PerDirection => (p1 + (1.0 - p1) * p2 * p2, (1.0 - p1) * 2.0 * p2 * (1.0 - p2)),
        OneWayMode::PerPair => (p1, (1.0 - p1) * p2),
    };
    let unconnected = 1.0 - recip - one_way;
    let pairs = stats.resident_pairs as f64;
    let per_pair_edges = 2.0 * recip + one_way;
    let per_pair_var = 4.0 * recip + one_way - per_pair_edges * per_pair_edges;
    let draws = pairs * f64::from(args.seeds);
    let sigma = |p: f64| (p * (1.0 - p) / draws).sqrt();
    let edge_sigma = (pairs * per_pair_var / f64::from(args.seeds)).sqrt();
    let row = |name: &str, got: f64, want: f64, s: f64| {
        let z = if s > 0.0 { (got - want) / s } else if got == want { 0.0 } else { f64::INFINITY };
        let verdict = if z.abs() <= 3.0 { "ok" } else { "OUTSIDE 3σ" };
        println!("{name:<28} {got:>10.4} {want:>10.4} {s:>9.4} {z:>7.2}  {verdict}");
    };
    println!(
        "{} agents ({} candidates), p1={p1}, p2={p2}, {:?}, {} seeds from {}",
        n,
        candidates.len(),
        mode,
        args.seeds,
        config.seed
    );
    println!("{:<28} {:>10} {:>10} {:>9} {:>7}", "statistic", "observed", "expected", "sigma", "z");
    row("reciprocal pair frequency", stats.reciprocal_freq, recip, sigma(recip));
    row("one-way pair frequency", stats.one_way_freq, one_way, sigma(one_way));
    row("unconnected pair frequency", stats.unconnected_freq, unconnected, sigma(unconnected));
    row("resident directed edges", stats.mean_resident_edges, pairs * per_pair_edges, edge_sigma);
    println!(
        "candidate in-degree          min {} max {} (expected {})",
        stats.candidate_in_degree.0,
        stats.candidate_in_degree.1,
        n - 1
    );
    println!("self-edges                   {}", stats.self_edges);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Export(args) => cmd_export(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::GraphStats(args) => cmd_graph_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
