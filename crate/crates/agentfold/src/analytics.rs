//! Context-dynamics metrics over trajectory corpora, with CSV and SVG export.
//!
//! Turn indexing is 0-based over a trajectory's records: record `t` holds the
//! context of turn `t`, and a trajectory of `n` records covers turns
//! `0..=n-1`. The per-turn average `A_t` is taken over the surviving set —
//! trajectories with more than `t` turns — so `surviving(t)` is non-increasing
//! in `t`. Token and block counts are recomputed from each record's context
//! snapshot with the caller's [`TokenCounter`], never trusted from the file.
//!
//! The default counter is the `chars/4` heuristic: deliberately approximate,
//! which is why every acceptance band downstream is defined on ratios and
//! curve shapes rather than absolute token counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{read_trajectory, TrajectoryError, TrajectoryRecord, TrajectorySummary};

/// Counts tokens in a piece of prompt text.
///
/// Contract: `count("") == 0` and concatenation is monotone,
/// `count(a + b) >= max(count(a), count(b))`.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// Default approximate counter: one token per four characters, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> u64 {
        approx_token_count(text)
    }
}

/// `ceil(chars / 4)` — the heuristic behind [`ApproxTokenCounter`].
pub fn approx_token_count(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Per-trajectory turn series: token and block counts per 0-based turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnSeries {
    pub question_id: String,
    pub tokens: Vec<u64>,
    pub blocks: Vec<u32>,
}

impl TurnSeries {
    pub fn turns(&self) -> usize {
        self.tokens.len()
    }
}

/// Builds a turn series from in-memory records, recounting tokens from the
/// context snapshots.
pub fn series_from_records(
    question_id: &str,
    records: &[TrajectoryRecord],
    counter: &dyn TokenCounter,
) -> TurnSeries {
    TurnSeries {
        question_id: question_id.to_string(),
        tokens: records.iter().map(|r| counter.count(&r.context.prompt)).collect(),
        blocks: records.iter().map(|r| r.context.workspace.block_count()).collect(),
    }
}

/// Cross-trajectory aggregate at one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAggregate {
    /// 0-based turn index.
    pub turn: u32,
    /// Number of trajectories with more than `turn` turns.
    pub surviving: u32,
    pub mean_tokens: f64,
    pub mean_blocks: f64,
}

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("corpora cover different question sets: {only_left:?} vs {only_right:?}")]
    MismatchedCorpora {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("cannot write {path}: {source}")]
    OutputUnwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no trajectories given")]
    EmptyCorpus,
}

/// Streaming aggregation: one pass over the series, accumulating per-turn
/// sums and survivor counts.
pub fn aggregate_series(series: &[TurnSeries]) -> Vec<TurnAggregate> {
    let max_turns = series.iter().map(TurnSeries::turns).max().unwrap_or(0);
    let mut token_sums = vec![0u128; max_turns];
    let mut block_sums = vec![0u64; max_turns];
    let mut survivors = vec![0u32; max_turns];
    for s in series {
        for t in 0..s.turns() {
            token_sums[t] += s.tokens[t] as u128;
            block_sums[t] += s.blocks[t] as u64;
            survivors[t] += 1;
        }
    }
    (0..max_turns)
        .map(|t| TurnAggregate {
            turn: t as u32,
            surviving: survivors[t],
            mean_tokens: token_sums[t] as f64 / survivors[t] as f64,
            mean_blocks: block_sums[t] as f64 / survivors[t] as f64,
        })
        .collect()
}

/// Loads one trajectory file into a turn series keyed by its question id.
pub fn load_series(path: &Path, counter: &dyn TokenCounter) -> Result<(TurnSeries, TrajectorySummary), AnalyticsError> {
    let (records, summary) = read_trajectory(path)?;
    Ok((series_from_records(&summary.question_id, &records, counter), summary))
}

/// Computes per-turn aggregates across trajectory files.
pub fn compute_aggregates(paths: &[PathBuf], counter: &dyn TokenCounter) -> Result<Vec<TurnAggregate>, AnalyticsError> {
    if paths.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let mut series = Vec::with_capacity(paths.len());
    for path in paths {
        series.push(load_series(path, counter)?.0);
    }
    Ok(aggregate_series(&series))
}

/// Token-count deltas between the two policies at one milestone turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub turn: u32,
    pub fold_mean_tokens: f64,
    pub react_mean_tokens: f64,
    pub absolute_delta: f64,
    pub percent_reduction: f64,
}

/// Per-turn series for the folding policy and the append-only baseline over
/// the same questions, plus deltas at the milestone turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub fold: Vec<TurnAggregate>,
    pub react: Vec<TurnAggregate>,
    pub milestones: Vec<Milestone>,
}

/// Turns at which the comparison reports deltas.
pub const MILESTONE_TURNS: [u32; 3] = [10, 50, 100];

fn question_ids(series: &[(TurnSeries, TrajectorySummary)]) -> BTreeSet<String> {
    series.iter().map(|(s, _)| s.question_id.clone()).collect()
}

/// Compares the two corpora, requiring them to cover the same question set.
pub fn compare_policies(
    fold_paths: &[PathBuf],
    react_paths: &[PathBuf],
    counter: &dyn TokenCounter,
) -> Result<ComparisonReport, AnalyticsError> {
    if fold_paths.is_empty() || react_paths.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let mut fold = Vec::new();
    for p in fold_paths {
        fold.push(load_series(p, counter)?);
    }
    let mut react = Vec::new();
    for p in react_paths {
        react.push(load_series(p, counter)?);
    }
    compare_loaded(&fold, &react)
}

/// Comparison core over already-loaded series (both sides must have been
/// counted with the same [`TokenCounter`]).
pub fn compare_loaded(
    fold: &[(TurnSeries, TrajectorySummary)],
    react: &[(TurnSeries, TrajectorySummary)],
) -> Result<ComparisonReport, AnalyticsError> {
    let fold_ids = question_ids(fold);
    let react_ids = question_ids(react);
    if fold_ids != react_ids {
        return Err(AnalyticsError::MismatchedCorpora {
            only_left: fold_ids.difference(&react_ids).cloned().collect(),
            only_right: react_ids.difference(&fold_ids).cloned().collect(),
        });
    }
    let fold_aggs = aggregate_series(&fold.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
    let react_aggs = aggregate_series(&react.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());

    let milestones = MILESTONE_TURNS
        .iter()
        .filter_map(|&turn| {
            let f = fold_aggs.iter().find(|a| a.turn == turn)?;
            let r = react_aggs.iter().find(|a| a.turn == turn)?;
            let absolute = r.mean_tokens - f.mean_tokens;
            let percent = if r.mean_tokens > 0.0 { absolute / r.mean_tokens * 100.0 } else { 0.0 };
            Some(Milestone {
                turn,
                fold_mean_tokens: f.mean_tokens,
                react_mean_tokens: r.mean_tokens,
                absolute_delta: absolute,
                percent_reduction: percent,
            })
        })
        .collect();

    Ok(ComparisonReport { fold: fold_aggs, react: react_aggs, milestones })
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(format!("unknown export format `{other}` (expected csv or svg)")),
        }
    }
}

/// Which aggregate column a chart plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Tokens,
    Blocks,
}

impl Metric {
    fn value(&self, a: &TurnAggregate) -> f64 {
        match self {
            Metric::Tokens => a.mean_tokens,
            Metric::Blocks => a.mean_blocks,
        }
    }

    fn axis_label(&self) -> &'static str {
        match self {
            Metric::Tokens => "mean context tokens",
            Metric::Blocks => "mean context blocks",
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), AnalyticsError> {
    std::fs::write(path, contents).map_err(|source| AnalyticsError::OutputUnwritable {
        path: path.display().to_string(),
        source,
    })
}

/// One CSV row per (policy, turn): `policy,turn,surviving,mean_tokens,mean_blocks`.
pub fn render_csv(series: &[(&str, &[TurnAggregate])]) -> String {
    let mut out = String::from("policy,turn,surviving,mean_tokens,mean_blocks\n");
    for (label, aggs) in series {
        for a in *aggs {
            let _ = writeln!(out, "{label},{},{},{:.4},{:.4}", a.turn, a.surviving, a.mean_tokens, a.mean_blocks);
        }
    }
    out
}

const SERIES_COLORS: [&str; 4] = ["#1f6fb4", "#d62728", "#2ca02c", "#9467bd"];

/// Standalone SVG line chart of one metric across labeled series. The output
/// is a pure function of its inputs: identical reports re-export to
/// byte-identical files.
fn render_svg(series: &[(&str, &[TurnAggregate])], metric: Metric, title: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const ML: f64 = 72.0; // left margin
    const MR: f64 = 24.0;
    const MT: f64 = 48.0;
    const MB: f64 = 56.0;

    let max_turn = series
        .iter()
        .flat_map(|(_, aggs)| aggs.iter().map(|a| a.turn))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let max_value = series
        .iter()
        .flat_map(|(_, aggs)| aggs.iter().map(|a| metric.value(a)))
        .fold(0.0_f64, f64::max)
        .max(1.0);

    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let x = |turn: f64| ML + turn / max_turn * plot_w;
    let y = |v: f64| MT + (1.0 - v / max_value) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="26" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(svg, r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#, H - MB);

    // Ticks: five per axis.
    for i in 0..=4 {
        let turn = max_turn * i as f64 / 4.0;
        let value = max_value * i as f64 / 4.0;
        let tx = x(turn);
        let ty = y(value);
        let _ = writeln!(
            svg,
            r#"<line x1="{tx:.1}" y1="{:.1}" x2="{tx:.1}" y2="{:.1}" stroke="black"/>"#,
            H - MB,
            H - MB + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.0}</text>"#,
            H - MB + 18.0,
            turn
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ty:.1}" x2="{ML}" y2="{ty:.1}" stroke="black"/>"#,
            ML - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.0}</text>"#,
            ML - 8.0,
            ty + 4.0,
            value
        );
    }

    // Axis labels.
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">turn</text>"#,
        ML + plot_w / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MT + plot_h / 2.0,
        MT + plot_h / 2.0,
        metric.axis_label()
    );

    // Series polylines and legend.
    for (idx, (label, aggs)) in series.iter().enumerate() {
        let color = SERIES_COLORS[idx % SERIES_COLORS.len()];
        let points = aggs
            .iter()
            .map(|a| format!("{:.1},{:.1}", x(a.turn as f64), y(metric.value(a))))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>"#);
        let ly = MT + 14.0 + idx as f64 * 18.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            ML + 12.0,
            ML + 40.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{label}</text>"#,
            ML + 46.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Exports a comparison report: `comparison.csv`, `milestones.csv`, and the
/// two curve charts when SVG is requested. Returns the written paths.
pub fn export(
    report: &ComparisonReport,
    formats: &[ExportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalyticsError> {
    std::fs::create_dir_all(out_dir).map_err(|source| AnalyticsError::OutputUnwritable {
        path: out_dir.display().to_string(),
        source,
    })?;
    let series: Vec<(&str, &[TurnAggregate])> =
        vec![("agentfold", report.fold.as_slice()), ("react", report.react.as_slice())];
    let mut written = Vec::new();

    if formats.contains(&ExportFormat::Csv) {
        let csv_path = out_dir.join("comparison.csv");
        write_file(&csv_path, &render_csv(&series))?;
        written.push(csv_path);

        let mut ms = String::from("turn,fold_mean_tokens,react_mean_tokens,absolute_delta,percent_reduction\n");
        for m in &report.milestones {
            let _ = writeln!(
                ms,
                "{},{:.4},{:.4},{:.4},{:.4}",
                m.turn, m.fold_mean_tokens, m.react_mean_tokens, m.absolute_delta, m.percent_reduction
            );
        }
        let ms_path = out_dir.join("milestones.csv");
        write_file(&ms_path, &ms)?;
        written.push(ms_path);
    }

    if formats.contains(&ExportFormat::Svg) {
        let tokens_path = out_dir.join("context_tokens.svg");
        write_file(&tokens_path, &render_svg(&series, Metric::Tokens, "Mean context tokens by turn"))?;
        written.push(tokens_path);
        let blocks_path = out_dir.join("block_counts.svg");
        write_file(&blocks_path, &render_svg(&series, Metric::Blocks, "Mean context blocks by turn"))?;
        written.push(blocks_path);
    }
    Ok(written)
}

/// Exports a single-corpus analysis (`aggregates.csv` plus charts).
pub fn export_aggregates(
    label: &str,
    aggs: &[TurnAggregate],
    formats: &[ExportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalyticsError> {
    std::fs::create_dir_all(out_dir).map_err(|source| AnalyticsError::OutputUnwritable {
        path: out_dir.display().to_string(),
        source,
    })?;
    let series: Vec<(&str, &[TurnAggregate])> = vec![(label, aggs)];
    let mut written = Vec::new();
    if formats.contains(&ExportFormat::Csv) {
        let path = out_dir.join("aggregates.csv");
        write_file(&path, &render_csv(&series))?;
        written.push(path);
    }
    if formats.contains(&ExportFormat::Svg) {
        let tokens_path = out_dir.join("context_tokens.svg");
        write_file(&tokens_path, &render_svg(&series, Metric::Tokens, "Mean context tokens by turn"))?;
        written.push(tokens_path);
        let blocks_path = out_dir.join("block_counts.svg");
        write_file(&blocks_path, &render_svg(&series, Metric::Blocks, "Mean context blocks by turn"))?;
        written.push(blocks_path);
    }
    Ok(written)
}
