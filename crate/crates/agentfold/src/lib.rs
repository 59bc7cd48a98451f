//! Runtime for agents that proactively fold their own context.
//!
//! The crate models an agent whose prompt is not an append-only log but a
//! partitioned cognitive workspace: the invariant question, the tool catalog,
//! an ordered sequence of multi-scale summary blocks covering the whole
//! history, and a verbatim record of the latest interaction. Each turn the
//! agent emits, alongside its next action, a fold directive that rewrites the
//! summary sequence — either condensing just the latest interaction into a
//! fine-grained block or consolidating a whole chain of prior blocks into one
//! coarse block.
//!
//! Module map:
//!
//! - [`workspace`]: the context data model and the fold engine.
//! - [`protocol`]: prompt rendering and the tagged response grammar.
//! - [`engine`]: the perceive/reason/fold/act loop, the append-only baseline,
//!   and trajectory persistence.
//! - [`backends`]: the chat-completion abstraction (scripted + HTTP).
//! - [`toolbox`]: tool registry, schemas, and mock tools.
//! - [`simenv`]: deterministic synthetic environment, oracle folding policy,
//!   and the summarization-survival Monte Carlo.
//! - [`collector`]: rejection-sampled SFT pair collection.
//! - [`analytics`]: context-growth metrics, CSV/SVG export.

pub mod analytics;
pub mod backends;
pub mod collector;
pub mod engine;
pub mod protocol;
pub mod seed;
pub mod simenv;
pub mod toolbox;
pub mod workspace;
