//! Rejection-sampled collection of (context, response) SFT pairs.
//!
//! The collector drives a teacher backend over a question set with strict
//! gates instead of the engine's tolerant fallbacks: a step whose completion
//! fails parsing or semantic validation (fold alignment, tool membership) is
//! resampled up to `max_step_retries` times and then the whole trajectory is
//! abandoned; a trajectory accumulating too many environment errors is
//! discarded outright. Surviving steps are emitted as JSONL
//! (`docs/sft-schema.md`), and every emitted pair re-validates from its own
//! persisted content alone — [`validate_pair`] reconstructs the block
//! structure from the rendered context text rather than trusting any
//! in-memory state.
//!
//! Accounting identity: `pairs_emitted + steps_rejected_terminal +
//! steps_in_discarded_trajectories == steps_attempted`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{complete_with_retries, BackendError, ChatBackend, GenerationParams, RetryPolicy};
use crate::engine::EngineError;
use crate::protocol::{
    parse_block_label, parse_response, parse_step_label, render_context_with, serialize_response,
    split_sections, Action, ParseError, RenderOptions,
};
use crate::toolbox::{execute, ToolRegistry};
use crate::workspace::{
    advance, apply_fold, validate_workspace, FoldError, LatestInteraction, MultiScaleSummaries,
    Question, ToolSchema, Workspace,
};

/// One input question: `{"id": ..., "question": ...}` in the questions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub question: String,
}

#[derive(Debug, Clone)]
pub struct CollectionConfig {
    pub questions: Vec<QuestionSpec>,
    pub output_path: PathBuf,
    /// Resamples allowed per step before the trajectory is abandoned.
    pub max_step_retries: u32,
    /// Environment errors tolerated per trajectory before it is discarded.
    pub max_env_errors: u32,
    pub max_turns: u32,
    pub display_offset: i32,
    pub observation_cap: usize,
    /// Worker threads for question-level parallelism; 0 uses the global pool.
    pub workers: usize,
    pub retry: RetryPolicy,
}

impl CollectionConfig {
    pub fn new(questions: Vec<QuestionSpec>, output_path: impl Into<PathBuf>) -> Self {
        Self {
            questions,
            output_path: output_path.into(),
            max_step_retries: 3,
            max_env_errors: 3,
            max_turns: 100,
            display_offset: 0,
            observation_cap: 50_000,
            workers: 0,
            retry: RetryPolicy::default(),
        }
    }
}

/// One training example: the rendered context and the gold response in
/// canonical serialized form. `label` is reserved for answer-quality marks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub question_id: String,
    pub step: u32,
    pub display_offset: i32,
    pub context: String,
    pub response: String,
    pub label: Option<String>,
}

/// Collection outcome counters. The accounting identity ties them together.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub questions: u32,
    pub trajectories_completed: u32,
    pub trajectories_abandoned_format: u32,
    pub trajectories_discarded_env: u32,
    pub pairs_emitted: u64,
    pub steps_rejected_terminal: u64,
    pub steps_in_discarded_trajectories: u64,
    pub steps_attempted: u64,
    pub completions_requested: u64,
    /// Terminal rejection reasons, keyed by error kind.
    pub rejection_reasons: BTreeMap<String, u64>,
}

impl CollectionReport {
    pub fn accounting_identity_holds(&self) -> bool {
        self.pairs_emitted + self.steps_rejected_terminal + self.steps_in_discarded_trajectories
            == self.steps_attempted
    }
}

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("teacher backend unavailable: {0}")]
    TeacherUnavailable(BackendError),
    #[error("cannot write {path}: {source}")]
    OutputUnwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: bad pair: {message}")]
    PairSchema { file: String, line: usize, message: String },
    #[error("invalid collection config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl FoldError {
    /// Stable variant name for rejection accounting.
    pub fn kind(&self) -> &'static str {
        match self {
            FoldError::InvalidRange { .. } => "InvalidRange",
            FoldError::EmptySummary => "EmptySummary",
            FoldError::NoLatestInteraction { .. } => "NoLatestInteraction",
            FoldError::RangeEndMismatch { .. } => "RangeEndMismatch",
            FoldError::RangeMisaligned { .. } => "RangeMisaligned",
        }
    }
}

enum TrajectoryOutcome {
    Completed,
    AbandonedFormat { reason: String },
    DiscardedEnv,
}

struct QuestionRun {
    pairs: Vec<SftPair>,
    steps_attempted: u64,
    completions_requested: u64,
    outcome: TrajectoryOutcome,
}

fn run_question(
    q: &QuestionSpec,
    cfg: &CollectionConfig,
    teacher: &dyn ChatBackend,
    tools: &ToolRegistry,
    params: &GenerationParams,
) -> Result<QuestionRun, CollectorError> {
    let question = Question::new(&q.question)
        .map_err(|e| CollectorError::Config(format!("question `{}`: {e}", q.id)))?;
    let catalog = tools.catalog();
    let opts = RenderOptions {
        display_offset: cfg.display_offset,
        observation_cap: cfg.observation_cap,
    };

    let mut ws = Workspace::initial(question, catalog.clone());
    let mut pairs = Vec::new();
    let mut env_errors = 0u32;
    let mut steps_attempted = 0u64;
    let mut completions_requested = 0u64;

    for step in 1..=cfg.max_turns {
        steps_attempted += 1;
        let prompt = render_context_with(&ws, &opts).map_err(|e| {
            CollectorError::Engine(EngineError::Internal(format!("render failed at step {step}: {e}")))
        })?;

        // Rejection sampling: resample the step until it passes the format
        // and semantic gates, or the retry budget runs out.
        let mut accepted: Option<(crate::protocol::AgentResponse, MultiScaleSummaries)> = None;
        let mut last_reason = String::from("NoAttempt");
        for _attempt in 0..=cfg.max_step_retries {
            completions_requested += 1;
            let (raw, _) = complete_with_retries(teacher, &prompt.text, step, params, &cfg.retry)
                .map_err(CollectorError::TeacherUnavailable)?;
            let response = match parse_response(&raw, step) {
                Ok(r) => r,
                Err(e) => {
                    last_reason = e.kind().to_string();
                    continue;
                }
            };
            if let Action::ToolCall { name, .. } = &response.action {
                if !catalog.contains(name) {
                    last_reason = "UnknownTool".to_string();
                    continue;
                }
            }
            let folded = match &response.fold {
                None => MultiScaleSummaries::empty(),
                Some(directive) => match apply_fold(&ws, directive) {
                    Ok(s) => s,
                    Err(e) => {
                        last_reason = e.kind().to_string();
                        continue;
                    }
                },
            };
            accepted = Some((response, folded));
            break;
        }

        let Some((response, folded)) = accepted else {
            return Ok(QuestionRun {
                pairs: Vec::new(),
                steps_attempted,
                completions_requested,
                outcome: TrajectoryOutcome::AbandonedFormat { reason: last_reason },
            });
        };

        pairs.push(SftPair {
            question_id: q.id.clone(),
            step,
            display_offset: cfg.display_offset,
            context: prompt.text.clone(),
            response: serialize_response(&response),
            label: None,
        });

        let observation = match &response.action {
            Action::FinalAnswer { .. } => {
                return Ok(QuestionRun {
                    pairs,
                    steps_attempted,
                    completions_requested,
                    outcome: TrajectoryOutcome::Completed,
                });
            }
            Action::ToolCall { name, arguments } => match execute(tools, name, arguments) {
                Ok(obs) => obs,
                Err(tool_err) => {
                    env_errors += 1;
                    if env_errors > cfg.max_env_errors {
                        return Ok(QuestionRun {
                            pairs: Vec::new(),
                            steps_attempted,
                            completions_requested,
                            outcome: TrajectoryOutcome::DiscardedEnv,
                        });
                    }
                    tool_err.to_observation_line()
                }
            },
        };

        let interaction = LatestInteraction {
            step,
            explanation: response.explanation.clone(),
            action: response.action.clone(),
            observation,
        };
        ws = advance(&ws, folded, interaction)
            .map_err(|e| CollectorError::Engine(EngineError::Internal(e.to_string())))?;
        validate_workspace(&ws)
            .map_err(|v| CollectorError::Engine(EngineError::InvalidWorkspace { step, violation: v }))?;
    }

    // Turn limit: the trajectory passed every gate, keep its pairs.
    Ok(QuestionRun {
        pairs,
        steps_attempted,
        completions_requested,
        outcome: TrajectoryOutcome::Completed,
    })
}

/// Runs the collection pipeline: one engine-style loop per question with
/// per-step resampling, emitting surviving pairs as JSONL in question order.
/// Questions run in parallel; the output is written by a single writer and is
/// byte-deterministic for fixed inputs.
pub fn collect<F>(
    cfg: &CollectionConfig,
    teacher: &dyn ChatBackend,
    tools_for: F,
    params: &GenerationParams,
) -> Result<CollectionReport, CollectorError>
where
    F: Fn(&QuestionSpec) -> ToolRegistry + Sync,
{
    if cfg.questions.is_empty() {
        return Err(CollectorError::Config("questions must be non-empty".into()));
    }

    let run_all = || -> Vec<Result<QuestionRun, CollectorError>> {
        use rayon::prelude::*;
        cfg.questions
            .par_iter()
            .map(|q| run_question(q, cfg, teacher, &tools_for(q), params))
            .collect()
    };
    let runs = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| CollectorError::Config(e.to_string()))?
            .install(run_all)
    } else {
        run_all()
    };

    let mut report = CollectionReport {
        questions: cfg.questions.len() as u32,
        ..Default::default()
    };
    let out_path = cfg.output_path.clone();
    let io_err = |source| CollectorError::OutputUnwritable {
        path: out_path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(&cfg.output_path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);

    for run in runs {
        let run = run?;
        report.steps_attempted += run.steps_attempted;
        report.completions_requested += run.completions_requested;
        match run.outcome {
            TrajectoryOutcome::Completed => {
                report.trajectories_completed += 1;
                report.pairs_emitted += run.pairs.len() as u64;
                for pair in &run.pairs {
                    let line = serde_json::to_string(pair).expect("pair serializes");
                    writeln!(out, "{line}").map_err(io_err)?;
                }
            }
            TrajectoryOutcome::AbandonedFormat { reason } => {
                report.trajectories_abandoned_format += 1;
                report.steps_rejected_terminal += 1;
                report.steps_in_discarded_trajectories += run.steps_attempted - 1;
                *report.rejection_reasons.entry(reason).or_insert(0) += 1;
            }
            TrajectoryOutcome::DiscardedEnv => {
                report.trajectories_discarded_env += 1;
                report.steps_in_discarded_trajectories += run.steps_attempted;
            }
        }
    }
    out.flush().map_err(io_err)?;
    debug_assert!(report.accounting_identity_holds());
    Ok(report)
}

/// Reads pairs back from a JSONL file, line by line.
pub fn read_pairs(path: &Path) -> Result<Vec<SftPair>, CollectorError> {
    let file = std::fs::File::open(path).map_err(|source| CollectorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CollectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| CollectorError::PairSchema {
            file: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Why a persisted pair failed re-validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairViolation {
    #[error("response does not parse: {0}")]
    Response(ParseError),
    #[error("context is malformed: {0}")]
    ContextMalformed(String),
    #[error("context block structure is incoherent: {0}")]
    ContextIncoherent(String),
    #[error("fold range start {start} does not align with the context's blocks")]
    RangeMisaligned { start: u32 },
    #[error("tool `{0}` is not in the context's catalog")]
    UnknownTool(String),
}

impl PairViolation {
    pub fn kind(&self) -> &'static str {
        match self {
            PairViolation::Response(e) => e.kind(),
            PairViolation::ContextMalformed(_) => "ContextMalformed",
            PairViolation::ContextIncoherent(_) => "ContextIncoherent",
            PairViolation::RangeMisaligned { .. } => "RangeMisaligned",
            PairViolation::UnknownTool(_) => "UnknownTool",
        }
    }
}

/// Re-validates a pair from its persisted content alone: re-parses the
/// response, reconstructs the block structure from the rendered context's
/// labels, re-checks the fold range against it, and checks tool membership
/// against the context's tool catalog. Total.
pub fn validate_pair(pair: &SftPair) -> Result<(), PairViolation> {
    let response = parse_response(&pair.response, pair.step).map_err(PairViolation::Response)?;

    let sections = split_sections(&pair.context);
    let body = |name: &str| -> Result<&str, PairViolation> {
        sections
            .iter()
            .find(|(h, _)| h == name)
            .map(|(_, b)| b.as_str())
            .ok_or_else(|| PairViolation::ContextMalformed(format!("missing `{name}` section")))
    };
    let summaries_body = body("State Summaries")?;
    let latest_body = body("Latest Interaction")?;
    let tools_body = body("Tools")?;

    let blocks: Vec<(u32, u32)> = summaries_body
        .lines()
        .filter_map(|line| parse_block_label(line, pair.display_offset))
        .collect();
    let latest_step = latest_body
        .lines()
        .next()
        .and_then(|line| parse_step_label(line, pair.display_offset));

    // Structural coherence of the rendered context itself.
    if let Some(first) = blocks.first() {
        if first.0 != 1 {
            return Err(PairViolation::ContextIncoherent(format!(
                "first block starts at {}",
                first.0
            )));
        }
    }
    for pair_w in blocks.windows(2) {
        if pair_w[1].0 != pair_w[0].1 + 1 {
            return Err(PairViolation::ContextIncoherent(format!(
                "gap between blocks ({},{}) and ({},{})",
                pair_w[0].0, pair_w[0].1, pair_w[1].0, pair_w[1].1
            )));
        }
    }
    match (pair.step, latest_step) {
        (1, None) => {}
        (1, Some(_)) => {
            return Err(PairViolation::ContextIncoherent(
                "step-1 context must not carry a latest interaction".into(),
            ))
        }
        (s, Some(l)) if l == s - 1 => {}
        (s, l) => {
            return Err(PairViolation::ContextIncoherent(format!(
                "latest interaction step {l:?} does not precede step {s}"
            )))
        }
    }
    let expected_cover = pair.step.saturating_sub(2);
    let covered = blocks.last().map(|b| b.1).unwrap_or(0);
    if covered != expected_cover {
        return Err(PairViolation::ContextIncoherent(format!(
            "blocks cover 1..={covered}, step {} requires 1..={expected_cover}",
            pair.step
        )));
    }

    if let Some(fold) = &response.fold {
        let aligned = Some(fold.range_start) == latest_step
            || blocks.iter().any(|(s, _)| *s == fold.range_start);
        if !aligned {
            return Err(PairViolation::RangeMisaligned { start: fold.range_start });
        }
    }

    if let Action::ToolCall { name, .. } = &response.action {
        let schemas: Vec<ToolSchema> = if tools_body.is_empty() {
            Vec::new()
        } else {
            serde_json::from_str(tools_body)
                .map_err(|e| PairViolation::ContextMalformed(format!("tools section: {e}")))?
        };
        if !schemas.iter().any(|t| &t.name == name) {
            return Err(PairViolation::UnknownTool(name.clone()));
        }
    }
    Ok(())
}
