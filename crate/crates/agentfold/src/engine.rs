//! Episode lifecycle: the perceive -> reason -> fold -> act loop, the
//! append-only baseline, and trajectory persistence.
//!
//! One episode is strictly sequential; distinct episodes may run concurrently
//! with no shared mutable state. Each executed step appends exactly one
//! [`TrajectoryRecord`] holding the rendered context the model saw, the raw
//! completion, the parse outcome, the observation, and the per-step metrics
//! used by the analytics module. Trajectories persist as JSONL (one record
//! per line, trailing summary object); the schema is documented in
//! `docs/trajectory-schema.md`.
//!
//! Parse failures during live runs never kill a step outright: the engine
//! retries once with a format reminder appended, then falls back to an
//! implicit granular fold of the latest interaction so the partition
//! invariant stays total. Rejection-sampling semantics for data collection
//! live in the collector module instead.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::approx_token_count;
use crate::backends::{complete_with_retries, BackendError, ChatBackend, GenerationParams, RetryPolicy};
use crate::protocol::{
    extract_action_lenient, parse_response, render_context_with, render_interaction, AgentResponse,
    ParseError, RenderOptions, RenderedPrompt, SectionKind, SectionSpan, HISTORY_HEADER,
    QUESTION_HEADER, TOOLS_HEADER,
};
use crate::toolbox::{execute, ToolRegistry};
use crate::workspace::{
    advance, apply_fold, implicit_granular_directive, validate_workspace, LatestInteraction,
    MultiScaleSummaries, Question, ToolCatalog, Workspace, WorkspaceViolation,
};

/// Which context policy an episode runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Folding workspace: multi-scale summaries plus the latest interaction.
    AgentFold,
    /// Append-only baseline: the full unsummarized history every step.
    React,
}

/// Appended to the prompt when a completion failed to parse and the step is
/// re-attempted once.
pub const FORMAT_REMINDER: &str = "\n\n[format reminder] Respond with exactly the tagged blocks \
<think>, <fold> (required after the first step, ending at the previous step), <explanation>, \
and one of <tool_call> or <answer>.";

/// Appended to the prompt for the optional salvage completion at the turn
/// limit.
pub const ANSWER_NOW_SUFFIX: &str = "\n\n[turn limit reached] Provide your best final answer now \
in a single <answer> block.";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    /// Hard cap on executed steps; the episode is forcibly terminated there.
    pub max_turns: u32,
    /// Episode ends once the environment-error count exceeds this.
    pub max_env_errors: u32,
    pub display_offset: i32,
    pub policy: PolicyKind,
    /// Ask the backend for one salvage answer when the turn limit hits.
    pub answer_on_turn_limit: bool,
    /// Character cap for the implicit-granular fallback summary.
    pub implicit_fold_summary_cap: usize,
    /// Fold summaries longer than this raise a warning (never truncated).
    pub summary_soft_cap: usize,
    pub observation_cap: usize,
    pub retry: RetryPolicy,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_turns: 100,
            max_env_errors: 3,
            display_offset: 0,
            policy: PolicyKind::AgentFold,
            answer_on_turn_limit: false,
            implicit_fold_summary_cap: 500,
            summary_soft_cap: 2000,
            observation_cap: 50_000,
            retry: RetryPolicy::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_turns == 0 {
            return Err(EngineError::Config("max_turns must be >= 1".into()));
        }
        Ok(())
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            display_offset: self.display_offset,
            observation_cap: self.observation_cap,
        }
    }
}

/// Structural snapshot of the context a step ran against, sufficient to
/// recompute its block count without the full texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum WorkspaceSnapshot {
    AgentFold {
        step: u32,
        blocks: Vec<BlockSpan>,
        latest_step: Option<u32>,
    },
    React {
        step: u32,
        history_len: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub start: u32,
    pub end: u32,
}

impl WorkspaceSnapshot {
    fn of_workspace(ws: &Workspace) -> Self {
        WorkspaceSnapshot::AgentFold {
            step: ws.step,
            blocks: ws
                .summaries
                .blocks()
                .iter()
                .map(|b| BlockSpan { start: b.start, end: b.end })
                .collect(),
            latest_step: ws.latest.as_ref().map(|l| l.step),
        }
    }

    /// Number of context blocks: summary entries plus the latest interaction
    /// for the folding policy, history entries for the append-only baseline.
    pub fn block_count(&self) -> u32 {
        match self {
            WorkspaceSnapshot::AgentFold { blocks, latest_step, .. } => {
                blocks.len() as u32 + u32::from(latest_step.is_some())
            }
            WorkspaceSnapshot::React { history_len, .. } => *history_len,
        }
    }

    pub fn step(&self) -> u32 {
        match self {
            WorkspaceSnapshot::AgentFold { step, .. } => *step,
            WorkspaceSnapshot::React { step, .. } => *step,
        }
    }
}

/// The rendered prompt the model saw plus its structural snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub prompt: String,
    pub workspace: WorkspaceSnapshot,
}

/// Outcome of parsing one completion, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParsedOutcome {
    Ok { response: AgentResponse },
    Err { kind: String, message: String },
}

impl ParsedOutcome {
    fn from_error(e: &ParseError) -> Self {
        ParsedOutcome::Err { kind: e.kind().to_string(), message: e.to_string() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ParsedOutcome::Ok { .. })
    }
}

/// One executed step: context snapshot, raw completion, parse outcome,
/// observation, and per-step metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u32,
    pub context: ContextSnapshot,
    pub raw_response: String,
    pub parsed: ParsedOutcome,
    pub observation: String,
    pub env_error: bool,
    /// Set when the executed fold was the implicit-granular fallback rather
    /// than the completion's own directive.
    pub implicit_fold: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fallback_reason: Option<String>,
    pub token_count: u64,
    pub block_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    TurnLimit,
    ErrorLimit,
    BackendFailure,
}

/// Result of one episode. `answer` is present exactly when the termination is
/// `Answered`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub answer: Option<String>,
    pub termination: Termination,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("backend failure at step {step}: {source}")]
    Backend {
        step: u32,
        #[source]
        source: BackendError,
    },
    #[error("unrecoverable parse failure at step {step}: {error}")]
    Parse {
        step: u32,
        error: ParseError,
        raw: String,
        prompt: String,
    },
    #[error("workspace invariant violated at step {step}: {violation}")]
    InvalidWorkspace { step: u32, violation: WorkspaceViolation },
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("internal engine error: {0}")]
    Internal(String),
}

/// Everything one folding step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub prompt: RenderedPrompt,
    pub raw_response: String,
    /// Strict parse outcome of the completion that was executed.
    pub parsed: ParsedOutcome,
    /// The response that was actually executed (after any fallback).
    pub response: AgentResponse,
    pub implicit_fold: bool,
    pub fallback_reason: Option<String>,
    pub observation: String,
    pub env_error: bool,
    /// Final answer text when the action completed the episode.
    pub answer: Option<String>,
    /// `C_{t+1}`; unchanged when the episode completed at this step.
    pub next: Workspace,
}

/// Parses a completion and pre-applies its fold, so semantic fold failures
/// (misalignment, bad range) are caught before any side effects.
fn interpret_completion(
    ws: &Workspace,
    raw: &str,
) -> Result<(AgentResponse, MultiScaleSummaries), String> {
    let response = parse_response(raw, ws.step).map_err(|e| e.to_string())?;
    let new_summaries = match &response.fold {
        None => MultiScaleSummaries::empty(),
        Some(directive) => apply_fold(ws, directive).map_err(|e| e.to_string())?,
    };
    Ok((response, new_summaries))
}

/// Runs one folding step: renders the workspace, queries the backend, parses
/// the completion, applies the fold (or the implicit-granular fallback),
/// executes the action, and returns the advanced workspace.
pub fn run_step(
    ws: &Workspace,
    backend: &dyn ChatBackend,
    tools: &ToolRegistry,
    cfg: &EpisodeConfig,
    params: &GenerationParams,
) -> Result<StepOutcome, EngineError> {
    let step = ws.step;
    let prompt = render_context_with(ws, &cfg.render_options()).map_err(|e| match e {
        crate::protocol::RenderError::InvalidWorkspace(v) => {
            EngineError::InvalidWorkspace { step, violation: v }
        }
    })?;

    let (raw, _) = complete_with_retries(backend, &prompt.text, step, params, &cfg.retry)
        .map_err(|source| EngineError::Backend { step, source })?;

    let mut implicit_fold = false;
    let mut fallback_reason = None;
    let mut executed_raw = raw;

    let (response, new_summaries) = match interpret_completion(ws, &executed_raw) {
        Ok(ok) => ok,
        Err(first_reason) => {
            // One re-attempt with a format reminder, then the fallback.
            let reminded = format!("{}{}", prompt.text, FORMAT_REMINDER);
            let (raw2, _) = complete_with_retries(backend, &reminded, step, params, &cfg.retry)
                .map_err(|source| EngineError::Backend { step, source })?;
            executed_raw = raw2;
            match interpret_completion(ws, &executed_raw) {
                Ok(ok) => ok,
                Err(second_reason) => {
                    let Some((thinking, explanation, action)) = extract_action_lenient(&executed_raw)
                    else {
                        let error = parse_response(&executed_raw, step)
                            .err()
                            .unwrap_or(ParseError::MissingAction);
                        return Err(EngineError::Parse {
                            step,
                            error,
                            raw: executed_raw,
                            prompt: prompt.text,
                        });
                    };
                    implicit_fold = true;
                    fallback_reason = Some(second_reason.clone());
                    tracing::warn!(step, first = %first_reason, second = %second_reason,
                        "completion failed twice; using implicit granular fold");
                    let directive = implicit_granular_directive(ws, cfg.implicit_fold_summary_cap);
                    let summaries = match &directive {
                        None => MultiScaleSummaries::empty(),
                        Some(d) => apply_fold(ws, d)
                            .map_err(|e| EngineError::Internal(format!("implicit fold failed: {e}")))?,
                    };
                    let response = AgentResponse {
                        thinking,
                        fold: directive,
                        explanation,
                        action,
                    };
                    (response, summaries)
                }
            }
        }
    };

    if let Some(fold) = &response.fold {
        if fold.summary.chars().count() > cfg.summary_soft_cap {
            tracing::warn!(step, len = fold.summary.chars().count(), cap = cfg.summary_soft_cap,
                "fold summary exceeds the soft cap; kept verbatim");
        }
    }

    let parsed = match parse_response(&executed_raw, step) {
        Ok(r) => ParsedOutcome::Ok { response: r },
        Err(e) => ParsedOutcome::from_error(&e),
    };

    let (observation, env_error, answer) = match &response.action {
        crate::protocol::Action::FinalAnswer { text } => (String::new(), false, Some(text.clone())),
        crate::protocol::Action::ToolCall { name, arguments } => {
            match execute(tools, name, arguments) {
                Ok(obs) => (obs, false, None),
                Err(tool_err) => (tool_err.to_observation_line(), true, None),
            }
        }
    };

    let next = if answer.is_some() {
        ws.clone()
    } else {
        let interaction = LatestInteraction {
            step,
            explanation: response.explanation.clone(),
            action: response.action.clone(),
            observation: observation.clone(),
        };
        let next = advance(ws, new_summaries, interaction).map_err(|e| match e {
            crate::workspace::AdvanceError::InvalidResult(v) => {
                EngineError::InvalidWorkspace { step, violation: v }
            }
            other => EngineError::Internal(other.to_string()),
        })?;
        validate_workspace(&next)
            .map_err(|violation| EngineError::InvalidWorkspace { step, violation })?;
        next
    };

    Ok(StepOutcome {
        prompt,
        raw_response: executed_raw,
        parsed,
        response,
        implicit_fold,
        fallback_reason,
        observation,
        env_error,
        answer,
        next,
    })
}

/// Renders the append-only baseline context: question, tools, then the full
/// unsummarized history in order.
pub fn build_react_context(
    question: &Question,
    tools: &ToolCatalog,
    history: &[LatestInteraction],
    opts: &RenderOptions,
) -> RenderedPrompt {
    let mut text = String::new();
    let mut sections = Vec::with_capacity(3);
    let push = |text: &mut String, sections: &mut Vec<SectionSpan>, kind, header: &str, body: &str| {
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        let start = text.len();
        text.push_str(header);
        if !body.is_empty() {
            text.push_str("\n\n");
            text.push_str(body);
        }
        sections.push(SectionSpan { kind, start, end: text.len() });
    };

    push(&mut text, &mut sections, SectionKind::Question, QUESTION_HEADER, question.text());
    let tools_body = if tools.tools().is_empty() {
        String::new()
    } else {
        serde_json::to_string_pretty(tools.tools()).expect("tool schemas serialize")
    };
    push(&mut text, &mut sections, SectionKind::Tools, TOOLS_HEADER, &tools_body);
    let history_body = history
        .iter()
        .map(|i| render_interaction(i, opts))
        .collect::<Vec<_>>()
        .join("\n\n");
    push(&mut text, &mut sections, SectionKind::History, HISTORY_HEADER, &history_body);

    RenderedPrompt { text, sections }
}

fn make_record(step: u32, snapshot: WorkspaceSnapshot, outcome: &StepOutcome) -> TrajectoryRecord {
    let block_count = snapshot.block_count();
    TrajectoryRecord {
        step,
        token_count: approx_token_count(&outcome.prompt.text),
        block_count,
        context: ContextSnapshot { prompt: outcome.prompt.text.clone(), workspace: snapshot },
        raw_response: outcome.raw_response.clone(),
        parsed: outcome.parsed.clone(),
        observation: outcome.observation.clone(),
        env_error: outcome.env_error,
        implicit_fold: outcome.implicit_fold,
        fallback_reason: outcome.fallback_reason.clone(),
    }
}

/// Accumulated state of an append-only baseline episode.
struct ReactState<'a> {
    question: &'a Question,
    catalog: &'a ToolCatalog,
    history: &'a [LatestInteraction],
}

/// Runs one append-only baseline step against the accumulated history.
fn run_react_step(
    state: &ReactState<'_>,
    step: u32,
    backend: &dyn ChatBackend,
    tools: &ToolRegistry,
    cfg: &EpisodeConfig,
    params: &GenerationParams,
) -> Result<StepOutcome, EngineError> {
    let prompt = build_react_context(state.question, state.catalog, state.history, &cfg.render_options());
    let (raw, _) = complete_with_retries(backend, &prompt.text, step, params, &cfg.retry)
        .map_err(|source| EngineError::Backend { step, source })?;

    // The baseline never folds, which is exactly the step-1 grammar.
    let mut executed_raw = raw;
    let mut fallback_reason = None;
    let response = match parse_response(&executed_raw, 1) {
        Ok(r) => r,
        Err(first) => {
            let reminded = format!("{}{}", prompt.text, FORMAT_REMINDER);
            let (raw2, _) = complete_with_retries(backend, &reminded, step, params, &cfg.retry)
                .map_err(|source| EngineError::Backend { step, source })?;
            executed_raw = raw2;
            match parse_response(&executed_raw, 1) {
                Ok(r) => r,
                Err(second) => match extract_action_lenient(&executed_raw) {
                    Some((thinking, explanation, action)) => {
                        fallback_reason = Some(second.to_string());
                        tracing::warn!(step, first = %first, second = %second,
                            "baseline completion failed twice; salvaged the action");
                        AgentResponse { thinking, fold: None, explanation, action }
                    }
                    None => {
                        return Err(EngineError::Parse {
                            step,
                            error: second,
                            raw: executed_raw,
                            prompt: prompt.text,
                        })
                    }
                },
            }
        }
    };

    let parsed = match parse_response(&executed_raw, 1) {
        Ok(r) => ParsedOutcome::Ok { response: r },
        Err(e) => ParsedOutcome::from_error(&e),
    };

    let (observation, env_error, answer) = match &response.action {
        crate::protocol::Action::FinalAnswer { text } => (String::new(), false, Some(text.clone())),
        crate::protocol::Action::ToolCall { name, arguments } => match execute(tools, name, arguments) {
            Ok(obs) => (obs, false, None),
            Err(tool_err) => (tool_err.to_observation_line(), true, None),
        },
    };

    Ok(StepOutcome {
        prompt,
        raw_response: executed_raw,
        parsed,
        implicit_fold: false,
        fallback_reason,
        observation,
        env_error,
        answer,
        response,
        // The baseline does not maintain a folding workspace; callers track
        // history instead. This placeholder is never used.
        next: Workspace::initial(state.question.clone(), state.catalog.clone()),
    })
}

/// Attempts one salvage answer at the turn limit.
fn salvage_answer(
    prompt_text: &str,
    step: u32,
    backend: &dyn ChatBackend,
    cfg: &EpisodeConfig,
    params: &GenerationParams,
) -> Option<String> {
    let prompt = format!("{prompt_text}{ANSWER_NOW_SUFFIX}");
    let (raw, _) = complete_with_retries(backend, &prompt, step, params, &cfg.retry).ok()?;
    match extract_action_lenient(&raw)? {
        (_, _, crate::protocol::Action::FinalAnswer { text }) => Some(text),
        _ => None,
    }
}

/// Runs a full episode: iterates steps until the agent answers, the turn
/// limit is reached, the environment-error budget is exhausted, or the
/// backend fails (partial records are retained in that case).
pub fn run_episode(
    question: &Question,
    cfg: &EpisodeConfig,
    backend: &dyn ChatBackend,
    tools: &ToolRegistry,
    params: &GenerationParams,
) -> Result<EpisodeResult, EngineError> {
    cfg.validate()?;
    let catalog = tools.catalog();
    let mut records = Vec::new();
    let mut env_errors = 0u32;

    let mut ws = Workspace::initial(question.clone(), catalog.clone());
    let mut history: Vec<LatestInteraction> = Vec::new();
    let mut last_prompt_text = String::new();

    for step in 1..=cfg.max_turns {
        let snapshot = match cfg.policy {
            PolicyKind::AgentFold => WorkspaceSnapshot::of_workspace(&ws),
            PolicyKind::React => WorkspaceSnapshot::React { step, history_len: history.len() as u32 },
        };

        let outcome = match cfg.policy {
            PolicyKind::AgentFold => run_step(&ws, backend, tools, cfg, params),
            PolicyKind::React => {
                let state = ReactState { question, catalog: &catalog, history: &history };
                run_react_step(&state, step, backend, tools, cfg, params)
            }
        };

        let outcome = match outcome {
            Ok(o) => o,
            Err(EngineError::Backend { .. }) => {
                return Ok(EpisodeResult { answer: None, termination: Termination::BackendFailure, records });
            }
            Err(EngineError::Parse { error, raw, prompt, .. }) => {
                // Keep the failing step on record for offline inspection,
                // then stop: without an action the loop cannot proceed.
                records.push(TrajectoryRecord {
                    step,
                    token_count: approx_token_count(&prompt),
                    block_count: snapshot.block_count(),
                    context: ContextSnapshot { prompt, workspace: snapshot },
                    raw_response: raw,
                    parsed: ParsedOutcome::Err { kind: error.kind().to_string(), message: error.to_string() },
                    observation: String::new(),
                    env_error: false,
                    implicit_fold: false,
                    fallback_reason: None,
                    });
                return Ok(EpisodeResult { answer: None, termination: Termination::BackendFailure, records });
            }
            Err(other) => return Err(other),
        };

        records.push(make_record(step, snapshot, &outcome));
        last_prompt_text = outcome.prompt.text.clone();

        if let Some(answer) = outcome.answer {
            return Ok(EpisodeResult { answer: Some(answer), termination: Termination::Answered, records });
        }
        if outcome.env_error {
            env_errors += 1;
            if env_errors > cfg.max_env_errors {
                return Ok(EpisodeResult { answer: None, termination: Termination::ErrorLimit, records });
            }
        }
        match cfg.policy {
            PolicyKind::AgentFold => ws = outcome.next,
            PolicyKind::React => history.push(LatestInteraction {
                step,
                explanation: outcome.response.explanation.clone(),
                action: outcome.response.action.clone(),
                observation: outcome.observation.clone(),
            }),
        }
    }

    // Forced termination at the turn limit.
    if cfg.answer_on_turn_limit {
        if let Some(answer) =
            salvage_answer(&last_prompt_text, cfg.max_turns + 1, backend, cfg, params)
        {
            return Ok(EpisodeResult { answer: Some(answer), termination: Termination::Answered, records });
        }
    }
    Ok(EpisodeResult { answer: None, termination: Termination::TurnLimit, records })
}

// ---------------------------------------------------------------------------
// Trajectory persistence
// ---------------------------------------------------------------------------

/// Run-level identity attached to a persisted trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub question_id: String,
    pub question: String,
    pub policy: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

/// Trailing summary object of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub question_id: String,
    pub question: String,
    pub policy: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub termination: Termination,
    pub answer: Option<String>,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TrajectoryLine {
    Record(TrajectoryRecord),
    Summary(TrajectorySummary),
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("failed to access {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: schema violation: {message}")]
    SchemaViolation { file: String, line: usize, message: String },
    #[error("{0}: missing trailing summary object")]
    MissingSummary(String),
}

/// Writes one episode as JSONL: one record per executed step, then the
/// summary object. Output bytes are a pure function of the inputs.
pub fn write_trajectory(path: &Path, meta: &TrajectoryMeta, result: &EpisodeResult) -> Result<(), TrajectoryError> {
    let io_err = |source| TrajectoryError::Io { file: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    for record in &result.records {
        let line = serde_json::to_string(&TrajectoryLine::Record(record.clone()))
            .expect("record serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    let summary = TrajectorySummary {
        question_id: meta.question_id.clone(),
        question: meta.question.clone(),
        policy: meta.policy,
        seed: meta.seed,
        termination: result.termination,
        answer: result.answer.clone(),
        steps: result.records.len() as u32,
    };
    let line = serde_json::to_string(&TrajectoryLine::Summary(summary)).expect("summary serializes");
    writeln!(out, "{line}").map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Reads a trajectory file back, validating the line schema and that record
/// steps increase strictly from 1.
pub fn read_trajectory(path: &Path) -> Result<(Vec<TrajectoryRecord>, TrajectorySummary), TrajectoryError> {
    let file_name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| TrajectoryError::Io {
        file: file_name.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);

    let mut records = Vec::new();
    let mut summary = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TrajectoryError::Io { file: file_name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| TrajectoryError::SchemaViolation {
                file: file_name.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        match parsed {
            TrajectoryLine::Record(r) => {
                if summary.is_some() {
                    return Err(TrajectoryError::SchemaViolation {
                        file: file_name.clone(),
                        line: line_no,
                        message: "record after summary".to_string(),
                    });
                }
                let expected = records.len() as u32 + 1;
                if r.step != expected {
                    return Err(TrajectoryError::SchemaViolation {
                        file: file_name.clone(),
                        line: line_no,
                        message: format!("record step {} out of order, expected {expected}", r.step),
                    });
                }
                records.push(r);
            }
            TrajectoryLine::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or(TrajectoryError::MissingSummary(file_name))?;
    Ok((records, summary))
}
