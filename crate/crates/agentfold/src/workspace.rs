//! The partitioned context model and the fold engine.
//!
//! A [`Workspace`] is the full context for the step about to execute: the
//! invariant question, the tool catalog, the [`MultiScaleSummaries`] covering
//! every step before the previous one, and the [`LatestInteraction`] — the
//! verbatim record of the previous step. The summaries are an ordered
//! partition of history: the first block starts at step 1, consecutive blocks
//! are contiguous, and together they cover steps `1..=t-2` at step `t`.
//!
//! A [`FoldDirective`] rewrites that partition. When its range starts at the
//! latest interaction's step it is a granular condensation (one verbose record
//! becomes one fine-grained block); when it starts earlier it is a deep
//! consolidation (the latest interaction plus a suffix of prior blocks
//! collapse into a single coarse block).
//!
//! All types are immutable values and all operations are pure, so they can be
//! shared freely across concurrent episode executors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Action;

/// The invariant user question `Q`, anchoring every step of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Question {
    text: String,
}

impl Question {
    pub fn new(text: impl Into<String>) -> Result<Self, WorkspaceViolation> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(WorkspaceViolation::EmptyQuestion);
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Semantic type of a tool parameter; every variant maps onto a JSON-schema
/// primitive type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    /// The JSON-schema `type` keyword this parameter type corresponds to.
    pub fn json_schema_type(&self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }
}

/// One named parameter in a tool schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub description: Option<String>,
}

impl ParamSpec {
    pub fn required(name: &str, param_type: ParamType, description: &str) -> Self {
        Self {
            name: name.to_string(),
            param_type,
            required: true,
            description: Some(description.to_string()),
        }
    }

    pub fn optional(name: &str, param_type: ParamType, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, param_type, description)
        }
    }
}

/// Schema for one tool: name, description, and its parameter specs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

/// Ordered catalog of tool schemas (symbol `T`); names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolCatalog {
    tools: Vec<ToolSchema>,
}

impl ToolCatalog {
    pub fn new(tools: Vec<ToolSchema>) -> Result<Self, WorkspaceViolation> {
        for (i, tool) in tools.iter().enumerate() {
            if tools[..i].iter().any(|t| t.name == tool.name) {
                return Err(WorkspaceViolation::DuplicateToolName(tool.name.clone()));
            }
        }
        Ok(Self { tools })
    }

    pub fn empty() -> Self {
        Self { tools: Vec::new() }
    }

    pub fn tools(&self) -> &[ToolSchema] {
        &self.tools
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }
}

/// One folded record `s_{x,y}`: a textual summary of the contiguous steps
/// `start..=end`. A single-step block (`start == end`) is a fine-grained
/// summary; a wider block is a coarse consolidation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub start: u32,
    pub end: u32,
    pub summary: String,
}

impl SummaryBlock {
    pub fn new(start: u32, end: u32, summary: impl Into<String>) -> Result<Self, WorkspaceViolation> {
        let summary = summary.into();
        if start == 0 || start > end {
            return Err(WorkspaceViolation::InvalidBlockRange { start, end });
        }
        if summary.is_empty() {
            return Err(WorkspaceViolation::EmptySummaryText { start, end });
        }
        Ok(Self { start, end, summary })
    }

    /// Number of steps this block covers.
    pub fn span(&self) -> u32 {
        self.end - self.start + 1
    }
}

/// The ordered sequence of summary blocks `S` partitioning the folded
/// history: first block starts at 1 and consecutive blocks are contiguous.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiScaleSummaries {
    blocks: Vec<SummaryBlock>,
}

impl MultiScaleSummaries {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a sequence from blocks, checking the partition constraints
    /// (start at 1, contiguity). Coverage relative to the current step is a
    /// workspace-level check.
    pub fn from_blocks(blocks: Vec<SummaryBlock>) -> Result<Self, WorkspaceViolation> {
        let s = Self { blocks };
        s.check_partition()?;
        Ok(s)
    }

    fn check_partition(&self) -> Result<(), WorkspaceViolation> {
        for b in &self.blocks {
            if b.start == 0 || b.start > b.end {
                return Err(WorkspaceViolation::InvalidBlockRange { start: b.start, end: b.end });
            }
            if b.summary.is_empty() {
                return Err(WorkspaceViolation::EmptySummaryText { start: b.start, end: b.end });
            }
        }
        if let Some(first) = self.blocks.first() {
            if first.start != 1 {
                return Err(WorkspaceViolation::FirstBlockStart { start: first.start });
            }
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if pair[1].start != pair[0].end + 1 {
                return Err(WorkspaceViolation::ContiguityBroken { index: i + 1 });
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[SummaryBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Last covered step, if any block exists.
    pub fn last_end(&self) -> Option<u32> {
        self.blocks.last().map(|b| b.end)
    }
}

/// Verbatim record of the previous step `I = (e, a, o)` plus its step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatestInteraction {
    pub step: u32,
    pub explanation: String,
    pub action: Action,
    pub observation: String,
}

/// The full context `C_t` for the step about to execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub question: Question,
    pub tools: ToolCatalog,
    pub summaries: MultiScaleSummaries,
    pub latest: Option<LatestInteraction>,
    /// The step about to execute (`t`, 1-based).
    pub step: u32,
}

impl Workspace {
    /// The initial context `C_1`: only the question and the tool catalog.
    pub fn initial(question: Question, tools: ToolCatalog) -> Self {
        Self {
            question,
            tools,
            summaries: MultiScaleSummaries::empty(),
            latest: None,
            step: 1,
        }
    }
}

/// First violated workspace constraint, named for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkspaceViolation {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("duplicate tool name `{0}`")]
    DuplicateToolName(String),
    #[error("block range ({start},{end}) invalid: step indices are 1-based and start must not exceed end")]
    InvalidBlockRange { start: u32, end: u32 },
    #[error("block ({start},{end}) has empty summary text")]
    EmptySummaryText { start: u32, end: u32 },
    #[error("first block starts at {start}, expected 1")]
    FirstBlockStart { start: u32 },
    #[error("contiguity broken at index {index}")]
    ContiguityBroken { index: usize },
    #[error("blocks cover steps 1..={actual} but step {step} requires coverage 1..={expected}")]
    CoverageMismatch { step: u32, expected: u32, actual: u32 },
    #[error("workspace step must be >= 1")]
    ZeroStep,
    #[error("step 1 context must have no summaries and no latest interaction")]
    InitialContextNotEmpty,
    #[error("step 2 context must have empty summaries")]
    SummariesAtStepTwo,
    #[error("step {step} context requires a latest interaction")]
    MissingLatestInteraction { step: u32 },
    #[error("latest interaction step is {actual}, expected {expected}")]
    LatestStepMismatch { expected: u32, actual: u32 },
}

/// Checks every workspace invariant, returning the first violation found.
/// Total: never panics, never errors for reasons other than the input.
pub fn validate_workspace(ws: &Workspace) -> Result<(), WorkspaceViolation> {
    if ws.question.text.trim().is_empty() {
        return Err(WorkspaceViolation::EmptyQuestion);
    }
    for (i, tool) in ws.tools.tools.iter().enumerate() {
        if ws.tools.tools[..i].iter().any(|t| t.name == tool.name) {
            return Err(WorkspaceViolation::DuplicateToolName(tool.name.clone()));
        }
    }
    if ws.step == 0 {
        return Err(WorkspaceViolation::ZeroStep);
    }
    ws.summaries.check_partition()?;

    match ws.step {
        1 => {
            if !ws.summaries.is_empty() || ws.latest.is_some() {
                return Err(WorkspaceViolation::InitialContextNotEmpty);
            }
        }
        2 => {
            if !ws.summaries.is_empty() {
                return Err(WorkspaceViolation::SummariesAtStepTwo);
            }
            let latest = ws
                .latest
                .as_ref()
                .ok_or(WorkspaceViolation::MissingLatestInteraction { step: 2 })?;
            if latest.step != 1 {
                return Err(WorkspaceViolation::LatestStepMismatch { expected: 1, actual: latest.step });
            }
        }
        t => {
            let expected_end = t - 2;
            match ws.summaries.last_end() {
                Some(actual) if actual == expected_end => {}
                Some(actual) => {
                    return Err(WorkspaceViolation::CoverageMismatch {
                        step: t,
                        expected: expected_end,
                        actual,
                    })
                }
                None => {
                    return Err(WorkspaceViolation::CoverageMismatch {
                        step: t,
                        expected: expected_end,
                        actual: 0,
                    })
                }
            }
            let latest = ws
                .latest
                .as_ref()
                .ok_or(WorkspaceViolation::MissingLatestInteraction { step: t })?;
            if latest.step != t - 1 {
                return Err(WorkspaceViolation::LatestStepMismatch {
                    expected: t - 1,
                    actual: latest.step,
                });
            }
        }
    }
    Ok(())
}

/// The agent's fold command `f_t = {"range":[k, t-1], "summary": sigma}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldDirective {
    pub range_start: u32,
    pub range_end: u32,
    pub summary: String,
}

impl FoldDirective {
    pub fn new(range_start: u32, range_end: u32, summary: impl Into<String>) -> Result<Self, FoldError> {
        let summary = summary.into();
        if range_start == 0 || range_start > range_end {
            return Err(FoldError::InvalidRange { start: range_start, end: range_end });
        }
        if summary.is_empty() {
            return Err(FoldError::EmptySummary);
        }
        Ok(Self { range_start, range_end, summary })
    }
}

/// Which of the two fold modes a directive performs against a workspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldKind {
    /// `k = t-1`: folds only the latest interaction into one new block.
    Granular,
    /// `k < t-1`: fuses the latest interaction with a chain of prior blocks.
    Deep,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FoldError {
    #[error("fold range ({start},{end}) invalid: indices are 1-based and start must not exceed end")]
    InvalidRange { start: u32, end: u32 },
    #[error("fold summary is empty")]
    EmptySummary,
    #[error("no latest interaction to fold at step {step}")]
    NoLatestInteraction { step: u32 },
    #[error("fold range ends at {got}, expected {expected}")]
    RangeEndMismatch { got: u32, expected: u32 },
    #[error("fold range start {start} does not coincide with a block start or the latest interaction")]
    RangeMisaligned { start: u32 },
}

/// Applies a fold directive to the workspace's summaries, producing the next
/// summary sequence `S_{t-1}`.
///
/// Every block whose start lies inside the fold range is retracted and a
/// single block `(range_start, t-1, summary)` is appended. The range start
/// must coincide with an existing block start (a fold can never split a block
/// whose text was already merged) or with the latest interaction's step.
/// Pure: the input workspace is untouched.
pub fn apply_fold(ws: &Workspace, directive: &FoldDirective) -> Result<MultiScaleSummaries, FoldError> {
    let latest = ws
        .latest
        .as_ref()
        .ok_or(FoldError::NoLatestInteraction { step: ws.step })?;
    if directive.range_start == 0 || directive.range_start > directive.range_end {
        return Err(FoldError::InvalidRange {
            start: directive.range_start,
            end: directive.range_end,
        });
    }
    if directive.summary.is_empty() {
        return Err(FoldError::EmptySummary);
    }
    let expected_end = ws.step - 1;
    if directive.range_end != expected_end {
        return Err(FoldError::RangeEndMismatch { got: directive.range_end, expected: expected_end });
    }

    let k = directive.range_start;
    let keep = if k == latest.step {
        // Granular condensation: no prior block is touched.
        ws.summaries.blocks().len()
    } else {
        // Deep consolidation: k must be the start of an existing block.
        match ws.summaries.blocks().iter().position(|b| b.start == k) {
            Some(idx) => idx,
            None => return Err(FoldError::RangeMisaligned { start: k }),
        }
    };

    let mut blocks: Vec<SummaryBlock> = ws.summaries.blocks()[..keep].to_vec();
    blocks.push(SummaryBlock {
        start: k,
        end: expected_end,
        summary: directive.summary.clone(),
    });
    Ok(MultiScaleSummaries { blocks })
}

/// Classifies a directive as granular or deep relative to the workspace.
pub fn fold_kind(ws: &Workspace, directive: &FoldDirective) -> FoldKind {
    if directive.range_start + 1 >= ws.step {
        FoldKind::Granular
    } else {
        FoldKind::Deep
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvanceError {
    #[error("interaction step {got} does not match workspace step {expected}")]
    StepMismatch { expected: u32, got: u32 },
    #[error("advanced workspace is invalid: {0}")]
    InvalidResult(WorkspaceViolation),
}

/// Builds the next context `C_{t+1} = (Q, T, S_{t-1}, I_t)`: the step
/// increments, the summaries are replaced by `new_summaries`, and the latest
/// interaction is replaced by this step's record. Question and tools carry
/// over unchanged. The result is re-validated before being returned.
pub fn advance(
    ws: &Workspace,
    new_summaries: MultiScaleSummaries,
    interaction: LatestInteraction,
) -> Result<Workspace, AdvanceError> {
    if interaction.step != ws.step {
        return Err(AdvanceError::StepMismatch { expected: ws.step, got: interaction.step });
    }
    let next = Workspace {
        question: ws.question.clone(),
        tools: ws.tools.clone(),
        summaries: new_summaries,
        latest: Some(interaction),
        step: ws.step + 1,
    };
    validate_workspace(&next).map_err(AdvanceError::InvalidResult)?;
    Ok(next)
}

/// Synthesizes the granular directive used when a step's completion carried
/// no usable fold: the summary is a verbatim truncation of the latest
/// explanation, capped at `summary_cap` characters. Returns `None` at step 1,
/// where no fold is possible.
pub fn implicit_granular_directive(ws: &Workspace, summary_cap: usize) -> Option<FoldDirective> {
    let latest = ws.latest.as_ref()?;
    let mut summary: String = latest.explanation.chars().take(summary_cap.max(1)).collect();
    if summary.trim().is_empty() {
        summary = format!("(unsummarized step {})", latest.step);
    }
    Some(FoldDirective {
        range_start: latest.step,
        range_end: ws.step - 1,
        summary,
    })
}
