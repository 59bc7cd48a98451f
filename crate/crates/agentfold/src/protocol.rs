//! Prompt rendering and the tagged response grammar.
//!
//! Rendering turns a [`Workspace`] into the model-facing prompt text: four
//! sections in document order (question, tools, state summaries, latest
//! interaction), with summary blocks labeled `[Compressed Step X]` or
//! `[Compressed Step X to Y]` and the latest interaction labeled `[Step N]`.
//! Labels carry a configurable display offset so rendered step numbers can
//! differ from the 1-based internal indices (offset 0 renders them 0-based).
//!
//! Parsing is the inverse direction: a raw completion is split into the
//! delimited blocks `<think>`, `<fold>`, `<explanation>`, and exactly one of
//! `<tool_call>` or `<answer>`, yielding an [`AgentResponse`]. The grammar is
//! documented byte-exact in `docs/protocol.md`; `parse_response` and
//! `serialize_response` are inverses over valid responses.
//!
//! Everything here is a pure function; no operation ever panics on malformed
//! input — every non-conforming completion maps to a named [`ParseError`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workspace::{FoldDirective, SummaryBlock, Workspace, WorkspaceViolation};

/// The external action `a_t`: a tool call or the final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall {
        name: String,
        arguments: serde_json::Map<String, serde_json::Value>,
    },
    FinalAnswer {
        text: String,
    },
}

impl Action {
    pub fn tool_call(name: &str, arguments: serde_json::Map<String, serde_json::Value>) -> Self {
        Action::ToolCall { name: name.to_string(), arguments }
    }

    pub fn final_answer(text: impl Into<String>) -> Self {
        Action::FinalAnswer { text: text.into() }
    }

    pub fn is_final_answer(&self) -> bool {
        matches!(self, Action::FinalAnswer { .. })
    }

    /// The JSON object embedded in prompts and `<tool_call>` blocks.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct ToolCallJson<'a> {
            name: &'a str,
            arguments: &'a serde_json::Map<String, serde_json::Value>,
        }
        #[derive(Serialize)]
        struct AnswerJson<'a> {
            final_answer: &'a str,
        }
        match self {
            Action::ToolCall { name, arguments } => {
                serde_json::to_string(&ToolCallJson { name, arguments }).expect("serializable")
            }
            Action::FinalAnswer { text } => {
                serde_json::to_string(&AnswerJson { final_answer: text }).expect("serializable")
            }
        }
    }
}

/// The parsed response quadruplet `(th_t, f_t, e_t, a_t)`.
///
/// `fold` is absent exactly at step 1, where there is no history to fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub thinking: String,
    pub fold: Option<FoldDirective>,
    pub explanation: String,
    pub action: Action,
}

/// Which prompt section a span covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Question,
    Tools,
    Summaries,
    Latest,
    /// Full unsummarized history (append-only baseline contexts only).
    History,
}

/// Byte range of one section within the rendered prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub kind: SectionKind,
    pub start: usize,
    pub end: usize,
}

/// A rendered prompt plus the byte spans of its sections, which are disjoint
/// and in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub sections: Vec<SectionSpan>,
}

impl RenderedPrompt {
    /// Text of one section (header line included), if present.
    pub fn section(&self, kind: SectionKind) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| &self.text[s.start..s.end])
    }
}

/// Rendering knobs. `display_offset` shifts step labels: internal step `x`
/// renders as `x + display_offset - 1`, so the default offset 0 produces
/// 0-based labels. Observations longer than `observation_cap` characters are
/// truncated with an explicit marker line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub display_offset: i32,
    pub observation_cap: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { display_offset: 0, observation_cap: 50_000 }
    }
}

impl RenderOptions {
    pub fn with_offset(display_offset: i32) -> Self {
        Self { display_offset, ..Self::default() }
    }
}

pub const QUESTION_HEADER: &str = "## Question";
pub const TOOLS_HEADER: &str = "## Tools";
pub const SUMMARIES_HEADER: &str = "## State Summaries";
pub const LATEST_HEADER: &str = "## Latest Interaction";
pub const HISTORY_HEADER: &str = "## Interaction History";
pub const TRUNCATION_MARKER: &str = "[observation truncated:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("workspace invalid: {0}")]
    InvalidWorkspace(#[from] WorkspaceViolation),
}

fn display_step(internal: u32, offset: i32) -> i64 {
    internal as i64 + offset as i64 - 1
}

fn internal_step(display: i64, offset: i32) -> Option<u32> {
    let internal = display - offset as i64 + 1;
    u32::try_from(internal).ok().filter(|s| *s >= 1)
}

/// Label for one summary block: `[Compressed Step X]` for a single-step block
/// and `[Compressed Step X to Y]` for a consolidated one.
pub fn block_label(block: &SummaryBlock, display_offset: i32) -> String {
    let x = display_step(block.start, display_offset);
    if block.start == block.end {
        format!("[Compressed Step {x}]")
    } else {
        format!("[Compressed Step {x} to {}]", display_step(block.end, display_offset))
    }
}

/// Label for an interaction record.
pub fn step_label(step: u32, display_offset: i32) -> String {
    format!("[Step {}]", display_step(step, display_offset))
}

/// Recovers internal block boundaries from a rendered summary-block label.
/// Inverse of [`block_label`] for the same offset.
pub fn parse_block_label(line: &str, display_offset: i32) -> Option<(u32, u32)> {
    let rest = line.trim_start().strip_prefix("[Compressed Step ")?;
    let close = rest.find(']')?;
    let body = &rest[..close];
    let (x, y) = match body.split_once(" to ") {
        Some((a, b)) => (a.trim().parse::<i64>().ok()?, b.trim().parse::<i64>().ok()?),
        None => {
            let v = body.trim().parse::<i64>().ok()?;
            (v, v)
        }
    };
    Some((internal_step(x, display_offset)?, internal_step(y, display_offset)?))
}

/// Recovers the internal step index from a rendered `[Step N]` label.
pub fn parse_step_label(line: &str, display_offset: i32) -> Option<u32> {
    let rest = line.trim_start().strip_prefix("[Step ")?;
    let close = rest.find(']')?;
    internal_step(rest[..close].trim().parse::<i64>().ok()?, display_offset)
}

fn push_section(text: &mut String, sections: &mut Vec<SectionSpan>, kind: SectionKind, header: &str, body: &str) {
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
}

fn truncate_observation(obs: &str, cap: usize) -> String {
    let total = obs.chars().count();
    if total <= cap {
        return obs.to_string();
    }
    let kept: String = obs.chars().take(cap).collect();
    format!("{kept}\n{TRUNCATION_MARKER} {total} characters, first {cap} shown]")
}

pub(crate) fn render_interaction(i: &crate::workspace::LatestInteraction, opts: &RenderOptions) -> String {
    format!(
        "{}\nExplanation: {}\nAction: {}\nObservation:\n{}",
        step_label(i.step, opts.display_offset),
        i.explanation,
        i.action.to_json(),
        truncate_observation(&i.observation, opts.observation_cap),
    )
}

fn tools_body(ws: &Workspace) -> String {
    if ws.tools.tools().is_empty() {
        String::new()
    } else {
        serde_json::to_string_pretty(ws.tools.tools()).expect("tool schemas serialize")
    }
}

/// Renders a workspace into the model-facing prompt: question, tools, state
/// summaries, and latest interaction, in that order. Sections that have no
/// content yet (summaries before the first fold, latest interaction at step
/// 1) render as a bare header. Deterministic in `(ws, opts)`.
pub fn render_context_with(ws: &Workspace, opts: &RenderOptions) -> Result<RenderedPrompt, RenderError> {
    crate::workspace::validate_workspace(ws)?;
    let mut text = String::new();
    let mut sections = Vec::with_capacity(4);

    push_section(&mut text, &mut sections, SectionKind::Question, QUESTION_HEADER, ws.question.text());
    push_section(&mut text, &mut sections, SectionKind::Tools, TOOLS_HEADER, &tools_body(ws));

    let summaries_body = ws
        .summaries
        .blocks()
        .iter()
        .map(|b| format!("{} {}", block_label(b, opts.display_offset), b.summary))
        .collect::<Vec<_>>()
        .join("\n");
    push_section(&mut text, &mut sections, SectionKind::Summaries, SUMMARIES_HEADER, &summaries_body);

    let latest_body = match &ws.latest {
        Some(i) => render_interaction(i, opts),
        None => String::new(),
    };
    push_section(&mut text, &mut sections, SectionKind::Latest, LATEST_HEADER, &latest_body);

    Ok(RenderedPrompt { text, sections })
}

/// [`render_context_with`] using default options except the display offset.
pub fn render_context(ws: &Workspace, display_offset: i32) -> Result<RenderedPrompt, RenderError> {
    render_context_with(ws, &RenderOptions::with_offset(display_offset))
}

/// Splits a rendered prompt back into `(header, body)` pairs, one per `## `
/// section. Used by consumers that only have the text (e.g. re-validating
/// persisted SFT pairs).
pub fn split_sections(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            out.push((h.to_string(), String::new()));
        } else if let Some(last) = out.last_mut() {
            if !last.1.is_empty() {
                last.1.push('\n');
            }
            last.1.push_str(line);
        }
    }
    for (_, body) in &mut out {
        let trimmed = body.trim();
        *body = trimmed.to_string();
    }
    out
}

// ---------------------------------------------------------------------------
// Response grammar
// ---------------------------------------------------------------------------

/// Why a completion failed to parse. Total coverage: any non-conforming input
/// maps to one of these, never a panic.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing <{0}> block")]
    MissingBlock(&'static str),
    #[error("duplicate <{0}> block")]
    DuplicateBlock(&'static str),
    #[error("unclosed <{0}> block")]
    UnclosedBlock(&'static str),
    #[error("missing <tool_call> or <answer> block")]
    MissingAction,
    #[error("both <tool_call> and <answer> blocks present")]
    AmbiguousAction,
    #[error("explanation block is empty")]
    EmptyExplanation,
    #[error("fold block is not a valid directive: {0}")]
    MalformedFoldJson(String),
    #[error("tool_call block is not a valid call: {0}")]
    MalformedToolJson(String),
    #[error("fold directive present at step 1")]
    FoldAtStepOne,
    #[error("fold range ends at {got}, expected {expected}")]
    RangeEndMismatch { got: u32, expected: u32 },
}

impl ParseError {
    /// Stable variant name, used as the rejection-accounting key.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::MissingBlock(_) => "MissingBlock",
            ParseError::DuplicateBlock(_) => "DuplicateBlock",
            ParseError::UnclosedBlock(_) => "UnclosedBlock",
            ParseError::MissingAction => "MissingAction",
            ParseError::AmbiguousAction => "AmbiguousAction",
            ParseError::EmptyExplanation => "EmptyExplanation",
            ParseError::MalformedFoldJson(_) => "MalformedFoldJson",
            ParseError::MalformedToolJson(_) => "MalformedToolJson",
            ParseError::FoldAtStepOne => "FoldAtStepOne",
            ParseError::RangeEndMismatch { .. } => "RangeEndMismatch",
        }
    }
}

/// Extracts the trimmed content of `<tag>...</tag>`, requiring at most one
/// occurrence. Returns `Ok(None)` if the tag is absent.
fn optional_block(raw: &str, tag: &'static str) -> Result<Option<String>, ParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = raw.find(&open) else {
        return Ok(None);
    };
    let content_start = start + open.len();
    let Some(rel_end) = raw[content_start..].find(&close) else {
        return Err(ParseError::UnclosedBlock(tag));
    };
    let content_end = content_start + rel_end;
    if raw[content_end + close.len()..].contains(&open) {
        return Err(ParseError::DuplicateBlock(tag));
    }
    // An opening tag nested inside its own block also counts as a duplicate.
    if raw[content_start..content_end].contains(&open) {
        return Err(ParseError::DuplicateBlock(tag));
    }
    Ok(Some(raw[content_start..content_end].trim().to_string()))
}

fn required_block(raw: &str, tag: &'static str) -> Result<String, ParseError> {
    optional_block(raw, tag)?.ok_or(ParseError::MissingBlock(tag))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FoldJson {
    range: (u32, u32),
    summary: String,
}

fn parse_fold_json(content: &str, step: u32) -> Result<FoldDirective, ParseError> {
    let fold: FoldJson =
        serde_json::from_str(content).map_err(|e| ParseError::MalformedFoldJson(e.to_string()))?;
    let (k, end) = fold.range;
    if k == 0 || k > end {
        return Err(ParseError::MalformedFoldJson(format!(
            "range [{k},{end}] invalid: indices are 1-based and start must not exceed end"
        )));
    }
    if fold.summary.is_empty() {
        return Err(ParseError::MalformedFoldJson("summary is empty".to_string()));
    }
    if end != step - 1 {
        return Err(ParseError::RangeEndMismatch { got: end, expected: step - 1 });
    }
    Ok(FoldDirective { range_start: k, range_end: end, summary: fold.summary })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolJson {
    name: String,
    #[serde(default)]
    arguments: serde_json::Map<String, serde_json::Value>,
}

fn parse_action(tool: Option<String>, answer: Option<String>) -> Result<Action, ParseError> {
    match (tool, answer) {
        (Some(_), Some(_)) => Err(ParseError::AmbiguousAction),
        (None, None) => Err(ParseError::MissingAction),
        (None, Some(text)) => Ok(Action::FinalAnswer { text }),
        (Some(raw), None) => {
            let call: ToolJson =
                serde_json::from_str(&raw).map_err(|e| ParseError::MalformedToolJson(e.to_string()))?;
            if call.name.is_empty() {
                return Err(ParseError::MalformedToolJson("tool name is empty".to_string()));
            }
            Ok(Action::ToolCall { name: call.name, arguments: call.arguments })
        }
    }
}

/// Parses a raw completion for the given step into an [`AgentResponse`].
///
/// A fold directive is required at every step after the first and forbidden
/// at step 1. Leading/trailing whitespace inside blocks is not significant.
pub fn parse_response(raw: &str, step: u32) -> Result<AgentResponse, ParseError> {
    let thinking = required_block(raw, "think")?;
    let fold_raw = optional_block(raw, "fold")?;
    let explanation = required_block(raw, "explanation")?;
    if explanation.is_empty() {
        return Err(ParseError::EmptyExplanation);
    }
    let action = parse_action(optional_block(raw, "tool_call")?, optional_block(raw, "answer")?)?;

    let fold = match fold_raw {
        Some(_) if step <= 1 => return Err(ParseError::FoldAtStepOne),
        Some(content) => Some(parse_fold_json(&content, step)?),
        None if step <= 1 => None,
        None => return Err(ParseError::MissingBlock("fold")),
    };

    Ok(AgentResponse { thinking, fold, explanation, action })
}

/// Best-effort extraction used by the engine's fallback path when the strict
/// parse failed: recovers the action (and whatever thinking/explanation text
/// is salvageable) while ignoring the fold block entirely. Returns `None`
/// when no well-formed action block exists.
pub(crate) fn extract_action_lenient(raw: &str) -> Option<(String, String, Action)> {
    let tool = optional_block(raw, "tool_call").ok().flatten();
    let answer = optional_block(raw, "answer").ok().flatten();
    let action = parse_action(tool, answer).ok()?;
    let thinking = optional_block(raw, "think").ok().flatten().unwrap_or_default();
    let explanation = optional_block(raw, "explanation").ok().flatten().unwrap_or_default();
    Some((thinking, explanation, action))
}

/// Emits the canonical tagged form accepted by [`parse_response`]:
/// `parse_response(serialize_response(r), step) == r` for every valid `r`
/// whose block contents do not embed their own closing tags.
pub fn serialize_response(r: &AgentResponse) -> String {
    let mut out = String::new();
    let mut block = |tag: &str, content: &str| {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("<{tag}>\n{content}\n</{tag}>"));
    };
    block("think", &r.thinking);
    if let Some(f) = &r.fold {
        #[derive(Serialize)]
        struct FoldOut<'a> {
            range: (u32, u32),
            summary: &'a str,
        }
        let json = serde_json::to_string(&FoldOut {
            range: (f.range_start, f.range_end),
            summary: &f.summary,
        })
        .expect("fold serializes");
        block("fold", &json);
    }
    block("explanation", &r.explanation);
    match &r.action {
        Action::ToolCall { .. } => block("tool_call", &r.action.to_json()),
        Action::FinalAnswer { text } => block("answer", text),
    }
    out
}
