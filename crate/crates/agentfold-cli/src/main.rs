//! `agentfold` — episode runner, synthetic-environment simulator, SFT
//! collector, and context-dynamics analyzer over one shared config format.
//!
//! Exit codes: 0 ok, 2 usage/config, 3 backend, 4 I/O.

mod config;
mod fixtures;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use agentfold::analytics::{
    compare_policies, compute_aggregates, export, export_aggregates, AnalyticsError,
    ApproxTokenCounter, ExportFormat,
};
use agentfold::backends::{ChatBackend, GenerationParams, HttpBackend, ScriptedBackend, ENV_MODEL};
use agentfold::collector::{collect, CollectionConfig, CollectorError};
use agentfold::engine::{run_episode, write_trajectory, EpisodeConfig, PolicyKind, TrajectoryMeta};
use agentfold::seed;
use agentfold::simenv::{
    generate_graph, run_policy_episode_with, survival_monte_carlo, OracleOptions, SimPolicy,
    SurvivalParams, SurvivalPolicy,
};
use agentfold::toolbox::{echo_registry, MockCorpus, ToolRegistry};
use agentfold::workspace::Question;

use config::FileConfig;
use fixtures::{load_questions, RoutingScriptedBackend};

#[derive(Parser)]
#[command(name = "agentfold", version, about = "Context-folding agent runtime")]
struct Cli {
    /// TOML config file; flags override its values (docs/config.md).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; per-component seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results never depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes over a question file and write trajectory JSONL.
    Run(RunArgs),
    /// Synthetic-environment studies (no model required).
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Collect SFT pairs from a teacher via rejection sampling.
    Collect(CollectArgs),
    /// Compute per-turn context metrics over trajectory files.
    Analyze(AnalyzeArgs),
    /// Compare folding and append-only corpora turn by turn.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Questions file (JSONL: {"id", "question"}).
    #[arg(long)]
    questions: PathBuf,
    /// Scripted completions fixture (JSONL: {"id", "completions": [...]}).
    #[arg(long)]
    scripted: Option<PathBuf>,
    /// Backend kind when no script is given: "http".
    #[arg(long)]
    backend: Option<String>,
    /// Mock corpus directory of .txt pages for search/visit.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for trajectory files.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    max_env_errors: Option<u32>,
    #[arg(long)]
    display_offset: Option<i32>,
    /// Context policy: "agentfold" or "react".
    #[arg(long)]
    policy: Option<String>,
    /// Ask for one salvage answer at the turn limit.
    #[arg(long)]
    salvage_answer: bool,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Resummarization-survival Monte Carlo.
    Survival(SurvivalArgs),
    /// Generate trajectory corpora with scripted policies.
    Episodes(EpisodesArgs),
}

#[derive(Args)]
struct SurvivalArgs {
    /// Per-resummarization loss probability.
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    trials: Option<u64>,
    /// "stepwise", "granular", or "both".
    #[arg(long)]
    policy: Option<String>,
    /// Optional output directory for survival.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EpisodesArgs {
    #[arg(long)]
    episodes: Option<u64>,
    /// Highest 0-based turn to record; episodes run turns+1 steps so the
    /// turn-`turns` aggregate exists.
    #[arg(long)]
    turns: Option<u32>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Filler noise per page in characters.
    #[arg(long)]
    noise: Option<usize>,
    /// Comma list of policies: fold, react, stepwise.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value = "sim")]
    out: PathBuf,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    questions: PathBuf,
    /// Scripted teacher fixture (JSONL: {"id", "completions": [...]}).
    #[arg(long)]
    scripted: Option<PathBuf>,
    /// Backend kind when no script is given: "http".
    #[arg(long)]
    backend: Option<String>,
    /// Mock corpus directory for the tool side.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output JSONL file of SFT pairs.
    #[arg(long, default_value = "pairs.jsonl")]
    out: PathBuf,
    #[arg(long)]
    max_step_retries: Option<u32>,
    #[arg(long)]
    max_env_errors: Option<u32>,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    display_offset: Option<i32>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trajectory files or directories of .jsonl files.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Comma list of formats: csv, svg.
    #[arg(long, default_value = "csv")]
    emit: String,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    /// Series label in exports.
    #[arg(long, default_value = "corpus")]
    label: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory of folding-policy trajectories.
    #[arg(long)]
    fold: PathBuf,
    /// Directory of append-only baseline trajectories.
    #[arg(long)]
    react: PathBuf,
    #[arg(long, default_value = "csv")]
    emit: String,
    #[arg(long, default_value = "comparison")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Backend(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Backend(m) | CliError::Io(m) => m,
        }
    }
}

impl From<CollectorError> for CliError {
    fn from(e: CollectorError) -> Self {
        match e {
            CollectorError::TeacherUnavailable(b) => CliError::Backend(b.to_string()),
            CollectorError::OutputUnwritable { .. } | CollectorError::Io { .. } => {
                CliError::Io(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::OutputUnwritable { .. } => CliError::Io(e.to_string()),
            AnalyticsError::Trajectory(agentfold::engine::TrajectoryError::Io { .. }) => {
                CliError::Io(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(CliError::Usage)?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let workers = cli.workers.or(file.workers).unwrap_or(0);
    if workers > 0 {
        // Determinism never depends on the pool size; this only bounds it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match cli.command {
        Command::Run(args) => cmd_run(args, &file, seed),
        Command::Simulate(SimulateCommand::Survival(args)) => cmd_survival(args, &file, seed),
        Command::Simulate(SimulateCommand::Episodes(args)) => cmd_episodes(args, &file, seed),
        Command::Collect(args) => cmd_collect(args, &file, seed),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn parse_policy(name: &str) -> Result<PolicyKind, CliError> {
    match name {
        "agentfold" | "fold" => Ok(PolicyKind::AgentFold),
        "react" => Ok(PolicyKind::React),
        other => Err(CliError::Usage(format!("unknown policy `{other}` (agentfold|react)"))),
    }
}

fn parse_formats(emit: &str) -> Result<Vec<ExportFormat>, CliError> {
    emit.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<ExportFormat>().map_err(CliError::Usage))
        .collect()
}

fn generation_params(file: &FileConfig) -> GenerationParams {
    GenerationParams {
        model_id: std::env::var(ENV_MODEL)
            .ok()
            .or_else(|| file.backend.model.clone())
            .unwrap_or_else(|| "scripted".to_string()),
        temperature: file.backend.temperature.unwrap_or(0.0),
        max_output_tokens: file.backend.max_output_tokens.unwrap_or(4096),
        stop_sequences: Vec::new(),
    }
}

fn build_tools(corpus: Option<&Path>) -> Result<ToolRegistry, CliError> {
    match corpus {
        Some(dir) => Ok(MockCorpus::load(dir)
            .map_err(|e| CliError::Io(format!("cannot load corpus {}: {e}", dir.display())))?
            .registry()),
        None => Ok(echo_registry()),
    }
}

fn jsonl_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .jsonl trajectories found", path.display())));
    }
    Ok(files)
}

fn usage_or_io(message: String) -> CliError {
    if message.contains("cannot read") {
        CliError::Io(message)
    } else {
        CliError::Usage(message)
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ResolvedRun {
    seed: u64,
    questions: String,
    backend: String,
    policy: String,
    max_turns: u32,
    max_env_errors: u32,
    display_offset: i32,
    salvage_answer: bool,
}

enum RunBackend {
    Scripted(RoutingScriptedBackend),
    Http(HttpBackend),
}

fn cmd_run(args: RunArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let questions = load_questions(&args.questions).map_err(usage_or_io)?;
    let policy = parse_policy(
        args.policy
            .or_else(|| file.run.policy.clone())
            .unwrap_or_else(|| "agentfold".to_string())
            .as_str(),
    )?;
    let cfg = EpisodeConfig {
        max_turns: args.max_turns.or(file.run.max_turns).unwrap_or(100),
        max_env_errors: args.max_env_errors.or(file.run.max_env_errors).unwrap_or(3),
        display_offset: args.display_offset.or(file.run.display_offset).unwrap_or(0),
        policy,
        answer_on_turn_limit: args.salvage_answer || file.run.salvage_answer.unwrap_or(false),
        ..Default::default()
    };
    let params = generation_params(file);
    let tools = build_tools(args.corpus.as_deref())?;

    let backend_kind = args
        .backend
        .or_else(|| file.backend.kind.clone())
        .unwrap_or_else(|| if args.scripted.is_some() { "scripted".into() } else { "http".into() });
    let backend = match (&args.scripted, backend_kind.as_str()) {
        (Some(path), _) => {
            RunBackend::Scripted(RoutingScriptedBackend::load(path, &questions).map_err(usage_or_io)?)
        }
        (None, "http") => {
            RunBackend::Http(HttpBackend::from_env().map_err(|e| CliError::Usage(e.to_string()))?)
        }
        (None, other) => {
            return Err(CliError::Usage(format!(
                "backend `{other}` needs --scripted, or use --backend http"
            )))
        }
    };

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out.display())))?;
    config::echo_resolved(
        &args.out,
        &ResolvedRun {
            seed,
            questions: args.questions.display().to_string(),
            backend: backend_kind.clone(),
            policy: format!("{policy:?}").to_lowercase(),
            max_turns: cfg.max_turns,
            max_env_errors: cfg.max_env_errors,
            display_offset: cfg.display_offset,
            salvage_answer: cfg.answer_on_turn_limit,
        },
    )
    .map_err(|e| CliError::Io(e.to_string()))?;

    for q in &questions {
        let question = Question::new(&q.question)
            .map_err(|e| CliError::Usage(format!("question `{}`: {e}", q.id)))?;
        let scripted_backend;
        let backend_ref: &dyn ChatBackend = match &backend {
            RunBackend::Scripted(routing) => {
                let script = routing
                    .script_for(&q.question)
                    .ok_or_else(|| CliError::Usage(format!("no script for question `{}`", q.id)))?;
                scripted_backend = ScriptedBackend::from_raw(script.to_vec());
                &scripted_backend
            }
            RunBackend::Http(http) => http,
        };
        let result = run_episode(&question, &cfg, backend_ref, &tools, &params).map_err(|e| match e {
            agentfold::engine::EngineError::Backend { source, .. } => CliError::Backend(source.to_string()),
            other => CliError::Usage(other.to_string()),
        })?;
        if result.termination == agentfold::engine::Termination::BackendFailure {
            return Err(CliError::Backend(format!(
                "question `{}`: backend failed after {} steps",
                q.id,
                result.records.len()
            )));
        }
        let path = args.out.join(format!("{}.jsonl", q.id));
        let meta = TrajectoryMeta {
            question_id: q.id.clone(),
            question: q.question.clone(),
            policy,
            seed: Some(seed),
        };
        write_trajectory(&path, &meta, &result).map_err(|e| CliError::Io(e.to_string()))?;
        println!(
            "{}: {:?} after {} steps -> {}",
            q.id,
            result.termination,
            result.records.len(),
            path.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate survival
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ResolvedSurvival {
    seed: u64,
    loss: f64,
    horizon: u32,
    trials: u64,
    policy: String,
}

fn cmd_survival(args: SurvivalArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let loss = args.loss.or(file.simulate.loss).unwrap_or(0.01);
    let horizon = args.horizon.or(file.simulate.horizon).unwrap_or(100);
    let trials = args.trials.or(file.simulate.trials).unwrap_or(1_000_000);
    let policy = args
        .policy
        .or_else(|| file.simulate.policy.clone())
        .unwrap_or_else(|| "both".to_string());
    let params = SurvivalParams { loss_prob: loss, horizon, trials, seed: seed::derive(seed, "survival") };

    let policies: Vec<(&str, SurvivalPolicy)> = match policy.as_str() {
        "stepwise" => vec![("stepwise", SurvivalPolicy::Stepwise)],
        "granular" => vec![("granular", SurvivalPolicy::GranularFold)],
        "both" => vec![
            ("stepwise", SurvivalPolicy::Stepwise),
            ("granular", SurvivalPolicy::GranularFold),
        ],
        other => return Err(CliError::Usage(format!("unknown survival policy `{other}`"))),
    };

    let mut results = serde_json::Map::new();
    for (name, p) in policies {
        let est = survival_monte_carlo(&params, p).map_err(|e| CliError::Usage(e.to_string()))?;
        println!(
            "survival {name}: rate {:.6} ({}/{} trials, loss {loss}, horizon {horizon})",
            est.rate, est.survivors, est.trials
        );
        results.insert(name.to_string(), serde_json::to_value(est).unwrap());
    }

    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
        config::echo_resolved(&out, &ResolvedSurvival { seed, loss, horizon, trials, policy })
            .map_err(|e| CliError::Io(e.to_string()))?;
        let path = out.join("survival.json");
        std::fs::write(&path, serde_json::to_string_pretty(&results).unwrap())
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate episodes
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ResolvedEpisodes {
    seed: u64,
    episodes: u64,
    turns: u32,
    nodes: usize,
    noise: usize,
    policies: Vec<String>,
}

fn sim_policy(name: &str) -> Result<SimPolicy, CliError> {
    match name.trim() {
        "fold" | "agentfold" => Ok(SimPolicy::AgentFoldOracle),
        "react" => Ok(SimPolicy::React),
        "stepwise" => Ok(SimPolicy::StepwiseSummarizer),
        other => Err(CliError::Usage(format!("unknown policy `{other}` (fold|react|stepwise)"))),
    }
}

fn sim_policy_dir(policy: SimPolicy) -> &'static str {
    match policy {
        SimPolicy::AgentFoldOracle => "fold",
        SimPolicy::React => "react",
        SimPolicy::StepwiseSummarizer => "stepwise",
    }
}

fn cmd_episodes(args: EpisodesArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let episodes = args.episodes.or(file.simulate.episodes).unwrap_or(200);
    let turns = args.turns.or(file.simulate.turns).unwrap_or(100);
    let nodes = args.nodes.or(file.simulate.nodes).unwrap_or(60);
    let noise = args.noise.or(file.simulate.noise).unwrap_or(800);
    if episodes == 0 || turns == 0 {
        return Err(CliError::Usage("episodes and turns must be >= 1".into()));
    }
    let policy_list = args
        .policy
        .or_else(|| file.simulate.policy.clone())
        .unwrap_or_else(|| "fold,react".to_string());
    let policies: Vec<SimPolicy> = policy_list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(sim_policy)
        .collect::<Result<_, _>>()?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out.display())))?;
    config::echo_resolved(
        &args.out,
        &ResolvedEpisodes {
            seed,
            episodes,
            turns,
            nodes,
            noise,
            policies: policies.iter().map(|p| sim_policy_dir(*p).to_string()).collect(),
        },
    )
    .map_err(|e| CliError::Io(e.to_string()))?;

    // Horizon-study corpora: the policies keep going so every turn up to
    // `turns` is populated; episodes run turns+1 steps (0-based turn grid).
    let opts = OracleOptions { answer_at_goal: false, ..Default::default() };
    let max_turns = turns + 1;
    for policy in &policies {
        let dir = args.out.join(sim_policy_dir(*policy));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    for i in 0..episodes {
        let graph_seed = seed::derive_indexed(seed, "episodes-graph", i);
        let graph = generate_graph(graph_seed, nodes, noise)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for policy in &policies {
            let result = run_policy_episode_with(&graph, *policy, max_turns, &opts)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let path = args.out.join(sim_policy_dir(*policy)).join(format!("ep{i:04}.jsonl"));
            let meta = TrajectoryMeta {
                question_id: format!("ep{i:04}"),
                question: graph.question().text().to_string(),
                policy: policy.policy_kind(),
                seed: Some(graph_seed),
            };
            write_trajectory(&path, &meta, &result).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    println!(
        "wrote {} episodes x {} policies ({} steps each) under {}",
        episodes,
        policies.len(),
        max_turns,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ResolvedCollect {
    seed: u64,
    questions: String,
    backend: String,
    max_step_retries: u32,
    max_env_errors: u32,
    max_turns: u32,
    display_offset: i32,
    output: String,
}

fn cmd_collect(args: CollectArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let questions = load_questions(&args.questions).map_err(usage_or_io)?;
    let params = generation_params(file);

    let backend_kind = args
        .backend
        .or_else(|| file.backend.kind.clone())
        .unwrap_or_else(|| if args.scripted.is_some() { "scripted".into() } else { "http".into() });
    let http_backend;
    let scripted_backend;
    let teacher: &dyn ChatBackend = match (&args.scripted, backend_kind.as_str()) {
        (Some(path), _) => {
            scripted_backend = RoutingScriptedBackend::load(path, &questions).map_err(usage_or_io)?;
            &scripted_backend
        }
        (None, "http") => {
            http_backend = HttpBackend::from_env().map_err(|e| CliError::Usage(e.to_string()))?;
            &http_backend
        }
        (None, other) => {
            return Err(CliError::Usage(format!(
                "backend `{other}` needs --scripted, or use --backend http"
            )))
        }
    };

    let cfg = CollectionConfig {
        max_step_retries: args.max_step_retries.or(file.collect.max_step_retries).unwrap_or(3),
        max_env_errors: args.max_env_errors.or(file.collect.max_env_errors).unwrap_or(3),
        max_turns: args.max_turns.or(file.collect.max_turns).unwrap_or(100),
        display_offset: args.display_offset.or(file.collect.display_offset).unwrap_or(0),
        ..CollectionConfig::new(questions, args.out.clone())
    };
    let tools = build_tools(args.corpus.as_deref())?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }

    let report = collect(&cfg, teacher, |_| tools.clone(), &params)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        config::echo_resolved(
            dir,
            &ResolvedCollect {
                seed,
                questions: args.questions.display().to_string(),
                backend: backend_kind,
                max_step_retries: cfg.max_step_retries,
                max_env_errors: cfg.max_env_errors,
                max_turns: cfg.max_turns,
                display_offset: cfg.display_offset,
                output: args.out.display().to_string(),
            },
        )
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze / compare
// ---------------------------------------------------------------------------

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let formats = parse_formats(&args.emit)?;
    let mut paths = Vec::new();
    for input in &args.inputs {
        paths.extend(jsonl_files(input)?);
    }
    let aggs = compute_aggregates(&paths, &ApproxTokenCounter)?;
    let written = export_aggregates(&args.label, &aggs, &formats, &args.out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let formats = parse_formats(&args.emit)?;
    let fold = jsonl_files(&args.fold)?;
    let react = jsonl_files(&args.react)?;
    let report = compare_policies(&fold, &react, &ApproxTokenCounter)?;
    for m in &report.milestones {
        println!(
            "turn {:>3}: fold {:>10.1} tokens vs react {:>10.1} tokens ({:.1}% smaller)",
            m.turn, m.fold_mean_tokens, m.react_mean_tokens, m.percent_reduction
        );
    }
    let written = export(&report, &formats, &args.out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
