//! Deterministic synthetic environment for model-free, full-loop testing.
//!
//! A [`FactGraph`] stands in for the web: a main chain of pages from an entry
//! page to a goal page, with decoy sub-paths branching off and dead-ending.
//! Page text carries configurable filler noise so context-growth curves are
//! tunable. Everything is a pure function of the seed and size parameters.
//!
//! The oracle policy walks the graph as a scripted backend: it condenses each
//! step granularly, deep-consolidates a decoy sub-path the moment it hits the
//! dead end, and consolidates old blocks whenever the workspace grows past a
//! bound — so its context stays compact over arbitrarily long horizons. The
//! same action plan drives the append-only baseline and the every-step
//! full-history summarizer, which makes the three regimes directly
//! comparable on identical episodes.
//!
//! [`survival_monte_carlo`] simulates the survival of one early finding under
//! repeated resummarization: the step-wise summarizer exposes the detail to
//! an independent loss event at every one of `horizon` resummarizations,
//! while a granular fold exposes it exactly once.

use std::sync::Arc;

use rand::distr::Bernoulli;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{GenerationParams, RetryPolicy, ScriptedBackend};
use crate::engine::{run_episode, EngineError, EpisodeConfig, EpisodeResult, PolicyKind};
use crate::protocol::{Action, AgentResponse};
use crate::toolbox::{
    noop_schema, search_schema, visit_schema, ToolError, ToolErrorKind, ToolRegistry,
};
use crate::workspace::{FoldDirective, Question};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimenvError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// One synthetic page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactNode {
    pub id: String,
    pub text: String,
    pub links: Vec<usize>,
}

/// A decoy sub-path: attached to one chain position, dead-ending after its
/// last member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoy {
    /// Index into `chain` where the decoy branches off.
    pub attach: usize,
    /// Node indices of the decoy members, in visit order.
    pub members: Vec<usize>,
}

/// Deterministic synthetic web: entry page, main chain, decoys, goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactGraph {
    pub seed: u64,
    pub noise_chars: usize,
    pub nodes: Vec<FactNode>,
    pub entry: usize,
    pub goal: usize,
    /// Main-path node indices from entry to goal.
    pub chain: Vec<usize>,
    pub decoys: Vec<Decoy>,
}

/// Decoy density: one decoy sub-path per this many nodes.
pub const NODES_PER_DECOY: usize = 10;
/// Length of each decoy sub-path.
pub const DECOY_LEN: usize = 3;

fn filler_words(rng: &mut ChaCha8Rng, target: usize) -> String {
    let mut out = String::with_capacity(target + 8);
    while out.len() < target {
        if !out.is_empty() {
            out.push(' ');
        }
        let len = rng.random_range(3..=9);
        for _ in 0..len {
            out.push(rng.random_range(b'a'..=b'z') as char);
        }
    }
    out.truncate(target);
    out
}

/// Generates a graph: a chain of `n_nodes` minus decoy nodes, decoys attached
/// at distinct interior chain positions, goal at the chain's end. Node text
/// length is drawn per node from `noise_chars` +/- 10%, so the mean
/// observation size tracks `noise_chars`.
pub fn generate_graph(seed: u64, n_nodes: usize, noise_chars: usize) -> Result<FactGraph, SimenvError> {
    if n_nodes < 2 {
        return Err(SimenvError::InvalidParams(format!("n_nodes must be >= 2, got {n_nodes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut decoy_count = n_nodes / NODES_PER_DECOY;
    while decoy_count > 0 && n_nodes - decoy_count * DECOY_LEN < 2 {
        decoy_count -= 1;
    }
    let chain_len = n_nodes - decoy_count * DECOY_LEN;
    // Decoys attach at distinct interior chain positions.
    decoy_count = decoy_count.min(chain_len.saturating_sub(2));

    let chain: Vec<usize> = (0..chain_len).collect();
    let mut interior: Vec<usize> = (1..chain_len.saturating_sub(1)).collect();
    interior.shuffle(&mut rng);
    let mut attach_positions: Vec<usize> = interior.into_iter().take(decoy_count).collect();
    attach_positions.sort_unstable();

    let mut decoys = Vec::with_capacity(decoy_count);
    let mut next_node = chain_len;
    for &attach in &attach_positions {
        let members: Vec<usize> = (next_node..next_node + DECOY_LEN).collect();
        next_node += DECOY_LEN;
        decoys.push(Decoy { attach, members });
    }

    let total = chain_len + decoy_count * DECOY_LEN;
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); total];
    for w in chain.windows(2) {
        links[w[0]].push(w[1]);
    }
    for d in &decoys {
        links[chain[d.attach]].push(d.members[0]);
        for w in d.members.windows(2) {
            links[w[0]].push(w[1]);
        }
        // Last member links nowhere: the dead end.
    }

    let goal = chain_len - 1;
    let mut nodes = Vec::with_capacity(total);
    for (idx, node_links) in links.into_iter().enumerate() {
        let id = format!("n{idx}");
        let fact = if idx == goal {
            format!("Target fact: the answer token is answer-{seed}.")
        } else {
            format!("Fact about {id}: token-{seed}-{idx}.")
        };
        let links_line = if node_links.is_empty() {
            "Links: (none)".to_string()
        } else {
            format!("Links: {}", node_links.iter().map(|l| format!("n{l}")).collect::<Vec<_>>().join(", "))
        };
        let base = format!("{fact}\n{links_line}\n");
        let target_len = (noise_chars as f64 * rng.random_range(0.9..=1.1)) as usize;
        let filler_len = target_len.saturating_sub(base.len());
        let text = format!("{base}{}", filler_words(&mut rng, filler_len));
        nodes.push(FactNode { id, text, links: node_links });
    }

    Ok(FactGraph { seed, noise_chars, nodes, entry: 0, goal, chain, decoys })
}

impl FactGraph {
    /// The question an episode over this graph is asked.
    pub fn question(&self) -> Question {
        Question::new(format!(
            "Starting from page {}, follow the link chain of dataset {} and report the answer token on the target page.",
            self.nodes[self.entry].id, self.seed
        ))
        .expect("non-empty")
    }

    /// The token the goal page carries; final answers must contain it.
    pub fn goal_token(&self) -> String {
        format!("answer-{}", self.seed)
    }

    /// True when `to` is reachable from `from` along links.
    pub fn reachable(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.nodes[n].links.iter().copied().filter(|&l| !seen[l]));
        }
        false
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("graph serializes"))
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Registry exposing a graph through `search` (returns the entry listing) and
/// `visit` (returns a page's text), plus `noop`.
pub fn graph_tools(graph: Arc<FactGraph>) -> ToolRegistry {
    let mut reg = ToolRegistry::new();

    let search_graph = graph.clone();
    reg.register(search_schema(), move |args| {
        let query = args.get("query").and_then(|v| v.as_str()).unwrap_or_default();
        let entry = &search_graph.nodes[search_graph.entry];
        let preview = entry.text.lines().next().unwrap_or_default();
        Ok(format!("Search results for `{query}`:\n{}: {preview}", entry.id))
    });

    let visit_graph = graph;
    reg.register(visit_schema(), move |args| {
        let url = args.get("url").and_then(|v| v.as_str()).unwrap_or_default();
        visit_graph
            .nodes
            .iter()
            .find(|n| n.id == url)
            .map(|n| n.text.clone())
            .ok_or_else(|| ToolError::new(ToolErrorKind::BadArguments, format!("no such page `{url}`")))
    });

    reg.register(noop_schema(), |_| Ok("ok".to_string()));
    reg
}

/// Which scripted policy drives an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimPolicy {
    /// Folding oracle: granular condensation by default, deep consolidation
    /// on dead ends and on workspace overflow.
    AgentFoldOracle,
    /// Append-only baseline.
    React,
    /// Re-summarizes the entire history into one block at every step.
    StepwiseSummarizer,
}

impl SimPolicy {
    pub fn policy_kind(&self) -> PolicyKind {
        match self {
            SimPolicy::React => PolicyKind::React,
            _ => PolicyKind::AgentFold,
        }
    }
}

/// Oracle tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOptions {
    /// Emit the final answer upon visiting the goal page. When false the
    /// policy keeps revisiting chain pages forever (for horizon studies).
    pub answer_at_goal: bool,
    /// Deep-consolidate once the block count reaches this bound.
    pub max_blocks: usize,
    /// Oldest blocks kept fine-grained by overflow consolidations.
    pub keep_prefix: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { answer_at_goal: true, max_blocks: 16, keep_prefix: 6 }
    }
}

/// What the planner visits at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Visit {
    Search,
    Chain(usize),
    Decoy { node: usize, first: bool, last: bool },
    Goal(usize),
    Bounce(usize),
}

/// The full visit order: search, then the chain with each decoy explored at
/// its attach point, then (if the plan must continue) bouncing over interior
/// chain pages.
fn plan_visits(graph: &FactGraph, steps: usize, answer_at_goal: bool) -> Vec<Visit> {
    let mut visits = vec![Visit::Search];
    'walk: for (pos, &node) in graph.chain.iter().enumerate() {
        let is_goal = node == graph.goal;
        visits.push(if is_goal { Visit::Goal(node) } else { Visit::Chain(node) });
        if visits.len() >= steps {
            break 'walk;
        }
        if let Some(decoy) = graph.decoys.iter().find(|d| d.attach == pos) {
            let count = decoy.members.len();
            for (i, &m) in decoy.members.iter().enumerate() {
                visits.push(Visit::Decoy { node: m, first: i == 0, last: i + 1 == count });
                if visits.len() >= steps {
                    break 'walk;
                }
            }
        }
    }
    if answer_at_goal {
        // Placeholder slot for the answering step; its action is replaced by
        // the final answer when the previous visit was the goal page.
        if matches!(visits.last(), Some(Visit::Goal(_))) && visits.len() < steps {
            visits.push(Visit::Bounce(graph.goal));
        }
    } else {
        // Keep revisiting interior chain pages; the fold rule keeps the
        // workspace bounded regardless of horizon.
        let interior: Vec<usize> = if graph.chain.len() > 2 {
            graph.chain[1..graph.chain.len() - 1].to_vec()
        } else {
            graph.chain.clone()
        };
        let mut i = 0usize;
        while visits.len() < steps {
            visits.push(Visit::Bounce(interior[i % interior.len()]));
            i += 1;
        }
    }
    visits.truncate(steps);
    visits
}

fn visit_node(v: &Visit) -> Option<usize> {
    match v {
        Visit::Search => None,
        Visit::Chain(n) | Visit::Goal(n) | Visit::Bounce(n) => Some(*n),
        Visit::Decoy { node, .. } => Some(*node),
    }
}

fn visit_action(graph: &FactGraph, v: &Visit) -> Action {
    match visit_node(v) {
        None => {
            let mut args = serde_json::Map::new();
            args.insert("query".into(), serde_json::Value::String(format!("dataset {}", graph.seed)));
            Action::tool_call("search", args)
        }
        Some(n) => {
            let mut args = serde_json::Map::new();
            args.insert("url".into(), serde_json::Value::String(graph.nodes[n].id.clone()));
            Action::tool_call("visit", args)
        }
    }
}

fn ids_in_range(graph: &FactGraph, visits: &[Visit], from_step: u32, to_step: u32) -> String {
    let mut ids: Vec<String> = Vec::new();
    for step in from_step..=to_step {
        match visits.get(step as usize - 1).and_then(visit_node) {
            Some(n) => ids.push(graph.nodes[n].id.clone()),
            None => ids.push("search".to_string()),
        }
    }
    if ids.len() > 8 {
        let extra = ids.len() - 8;
        ids.truncate(8);
        ids.push(format!("+{extra} more"));
    }
    ids.join(",")
}

/// Scripts a full episode for one policy over the graph: exactly `steps`
/// responses (or fewer if the oracle answers first).
pub fn plan_responses(
    graph: &FactGraph,
    policy: SimPolicy,
    steps: u32,
    opts: &OracleOptions,
) -> Vec<AgentResponse> {
    let answer_at_goal = opts.answer_at_goal;
    let visits = plan_visits(graph, steps as usize, answer_at_goal);
    let mut responses = Vec::with_capacity(visits.len());

    // Mirror of the workspace's block spans, maintained exactly as apply_fold
    // would, so every planned fold is aligned by construction.
    let mut blocks: Vec<(u32, u32)> = Vec::new();
    let mut decoy_start_step: Option<u32> = None;
    let mut answered = false;

    for (i, visit) in visits.iter().enumerate() {
        if answered {
            break;
        }
        let step = i as u32 + 1;

        // Answer one step after visiting the goal page.
        let answer_now = answer_at_goal
            && step >= 2
            && matches!(visits.get(i - 1), Some(Visit::Goal(_)));

        let fold = if step == 1 || policy == SimPolicy::React {
            None
        } else {
            let prev = step - 1;
            let directive = match policy {
                SimPolicy::React => unreachable!("baseline never folds"),
                SimPolicy::StepwiseSummarizer => FoldDirective {
                    range_start: 1,
                    range_end: prev,
                    summary: format!(
                        "full-history digest through step {prev}: followed {}",
                        ids_in_range(graph, &visits, prev.saturating_sub(2).max(1), prev)
                    ),
                },
                SimPolicy::AgentFoldOracle => {
                    let dead_end_done =
                        matches!(visits.get(i - 1), Some(Visit::Decoy { last: true, .. }));
                    if dead_end_done {
                        let start = decoy_start_step.take().unwrap_or(prev);
                        FoldDirective {
                            range_start: start,
                            range_end: prev,
                            summary: format!(
                                "dead end: explored {} with nothing relevant, backtracking",
                                ids_in_range(graph, &visits, start, prev)
                            ),
                        }
                    } else if blocks.len() >= opts.max_blocks && decoy_start_step.is_none() {
                        // Never fires mid-decoy: the pending dead-end fold
                        // needs the decoy's first block to stay aligned.
                        let start = blocks[opts.keep_prefix.min(blocks.len() - 1)].0;
                        FoldDirective {
                            range_start: start,
                            range_end: prev,
                            summary: format!(
                                "recap of steps {start}-{prev}: covered {}",
                                ids_in_range(graph, &visits, start, prev)
                            ),
                        }
                    } else {
                        let summary = match visits.get(i - 1).and_then(visit_node) {
                            None => format!("searched dataset {}; entry page {}", graph.seed, graph.nodes[graph.entry].id),
                            Some(n) => {
                                let node = &graph.nodes[n];
                                let links = node
                                    .links
                                    .iter()
                                    .map(|l| graph.nodes[*l].id.clone())
                                    .collect::<Vec<_>>()
                                    .join(",");
                                if n == graph.goal {
                                    format!("{}: found target token {}", node.id, graph.goal_token())
                                } else if links.is_empty() {
                                    format!("{}: no further links", node.id)
                                } else {
                                    format!("{}: links to {links}", node.id)
                                }
                            }
                        };
                        FoldDirective { range_start: prev, range_end: prev, summary }
                    }
                }
            };
            // Mirror the retraction.
            blocks.retain(|(s, _)| *s < directive.range_start);
            blocks.push((directive.range_start, directive.range_end));
            Some(directive)
        };

        if let Visit::Decoy { first: true, .. } = visit {
            decoy_start_step = Some(step);
        }

        let (explanation, action) = if answer_now {
            answered = true;
            (
                "the target page has been reached; reporting its answer token".to_string(),
                Action::final_answer(format!(
                    "The answer token is {} (page {}).",
                    graph.goal_token(),
                    graph.nodes[graph.goal].id
                )),
            )
        } else {
            let explanation = match visit {
                Visit::Search => format!("search for the entry page of dataset {}", graph.seed),
                Visit::Chain(n) | Visit::Goal(n) => {
                    format!("follow the chain to page {}", graph.nodes[*n].id)
                }
                Visit::Decoy { node, .. } => {
                    format!("check side branch page {}", graph.nodes[*node].id)
                }
                Visit::Bounce(n) => format!("re-verify page {}", graph.nodes[*n].id),
            };
            (explanation, visit_action(graph, visit))
        };

        responses.push(AgentResponse {
            thinking: format!("step {step}: plan the fold and the next move"),
            fold,
            explanation,
            action,
        });
    }
    responses
}

/// Steps the oracle needs to answer a graph: search + every chain page +
/// every decoy page + the answering step.
pub fn oracle_answer_steps(graph: &FactGraph) -> u32 {
    let decoy_total: usize = graph.decoys.iter().map(|d| d.members.len()).sum();
    (1 + graph.chain.len() + decoy_total + 1) as u32
}

/// Runs a full engine loop over the graph with the policy scripted as the
/// backend. Deterministic for a fixed graph.
pub fn run_policy_episode(
    graph: &FactGraph,
    policy: SimPolicy,
    max_turns: u32,
) -> Result<EpisodeResult, EngineError> {
    run_policy_episode_with(graph, policy, max_turns, &OracleOptions::default())
}

pub fn run_policy_episode_with(
    graph: &FactGraph,
    policy: SimPolicy,
    max_turns: u32,
    opts: &OracleOptions,
) -> Result<EpisodeResult, EngineError> {
    let responses = plan_responses(graph, policy, max_turns, opts);
    let backend = ScriptedBackend::from_responses(&responses);
    let tools = graph_tools(Arc::new(graph.clone()));
    let cfg = EpisodeConfig {
        max_turns,
        policy: policy.policy_kind(),
        retry: RetryPolicy::immediate(0),
        ..Default::default()
    };
    run_episode(&graph.question(), &cfg, &backend, &tools, &GenerationParams::default())
}

// ---------------------------------------------------------------------------
// Survival Monte Carlo
// ---------------------------------------------------------------------------

/// Parameters of the resummarization-survival experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalParams {
    /// Chance of losing the detail at each resummarization.
    pub loss_prob: f64,
    /// Number of resummarization events the step-wise policy applies.
    pub horizon: u32,
    pub trials: u64,
    pub seed: u64,
}

/// How a detail from step 1 is re-processed over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalPolicy {
    /// Full-history resummarization at every step: `horizon` independent
    /// loss events.
    Stepwise,
    /// One granular condensation, then the block is never reprocessed:
    /// exactly one loss event.
    GranularFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub rate: f64,
    pub survivors: u64,
    pub trials: u64,
}

const TRIAL_BATCH: u64 = 10_000;

/// Estimates the probability that a step-1 detail survives in context.
///
/// Trials run in deterministic batches (one RNG stream per batch), so the
/// estimate is independent of the parallelism degree.
pub fn survival_monte_carlo(
    params: &SurvivalParams,
    policy: SurvivalPolicy,
) -> Result<SurvivalEstimate, SimenvError> {
    if params.trials == 0 {
        return Err(SimenvError::InvalidParams("trials must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.loss_prob) {
        return Err(SimenvError::InvalidParams(format!(
            "loss_prob must be in [0,1], got {}",
            params.loss_prob
        )));
    }
    if params.horizon == 0 {
        return Err(SimenvError::InvalidParams("horizon must be >= 1".into()));
    }
    let loss = Bernoulli::new(params.loss_prob)
        .map_err(|e| SimenvError::InvalidParams(e.to_string()))?;
    let events = match policy {
        SurvivalPolicy::Stepwise => params.horizon,
        SurvivalPolicy::GranularFold => 1,
    };

    let batches = params.trials.div_ceil(TRIAL_BATCH);
    let survivors: u64 = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(batch);
            let in_batch = TRIAL_BATCH.min(params.trials - batch * TRIAL_BATCH);
            let mut alive = 0u64;
            for _ in 0..in_batch {
                let lost = (0..events).any(|_| loss.sample(&mut rng));
                alive += u64::from(!lost);
            }
            alive
        })
        .sum();

    Ok(SurvivalEstimate {
        rate: survivors as f64 / params.trials as f64,
        survivors,
        trials: params.trials,
    })
}
