//! Tool registry and execution.
//!
//! A [`ToolRegistry`] pairs each tool schema with an executor closure. The
//! registry snapshot an episode runs against is immutable; executors must
//! tolerate concurrent calls from distinct episodes. Failures never abort the
//! loop: [`execute`] returns a [`ToolError`] that the engine renders as a
//! tagged error line in the observation so the agent can see it and react,
//! and that feeds the episode's environment-error counter exactly once.
//!
//! Real web tools are adapters behind the same contract and are not enabled
//! here; tests and the synthetic environment run entirely on mock tools. The
//! default catalog (search / visit / noop) is a reconstruction of a typical
//! web-agent tool set, not a transcription of any specific deployment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::workspace::{ParamSpec, ParamType, ToolCatalog, ToolSchema};

/// Failure class of a tool invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    /// No such tool in the registry.
    NotFound,
    /// Arguments do not match the schema (missing required, undeclared, or
    /// wrongly typed parameters), or the executor rejected them.
    BadArguments,
    /// Transport-level failure reported by the executor.
    Transport,
    /// The tool ran but produced nothing useful.
    Empty,
}

impl ToolErrorKind {
    fn label(&self) -> &'static str {
        match self {
            ToolErrorKind::NotFound => "not_found",
            ToolErrorKind::BadArguments => "bad_arguments",
            ToolErrorKind::Transport => "transport",
            ToolErrorKind::Empty => "empty",
        }
    }
}

/// A tool-declared failure: kind plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub message: String,
}

impl ToolError {
    pub fn new(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        let message = message.into();
        debug_assert!(!message.is_empty());
        Self { kind, message }
    }

    /// The tagged error line embedded in the observation in place of output.
    pub fn to_observation_line(&self) -> String {
        format!("[tool error: {}] {}", self.kind.label(), self.message)
    }
}

impl fmt::Display for ToolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.message)
    }
}

impl std::error::Error for ToolError {}

pub type Arguments = serde_json::Map<String, serde_json::Value>;
pub type ToolExecutor = Arc<dyn Fn(&Arguments) -> Result<String, ToolError> + Send + Sync>;

/// Tool schemas paired with their executors. Keys are the schema names.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    entries: Vec<(ToolSchema, ToolExecutor)>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tool. Panics on a duplicate name: the registry is built
    /// once at configuration time and names must be unique.
    pub fn register<F>(&mut self, schema: ToolSchema, executor: F) -> &mut Self
    where
        F: Fn(&Arguments) -> Result<String, ToolError> + Send + Sync + 'static,
    {
        assert!(
            !self.entries.iter().any(|(s, _)| s.name == schema.name),
            "duplicate tool name `{}`",
            schema.name
        );
        self.entries.push((schema, Arc::new(executor)));
        self
    }

    pub fn get(&self, name: &str) -> Option<&(ToolSchema, ToolExecutor)> {
        self.entries.iter().find(|(s, _)| s.name == name)
    }

    /// Immutable catalog snapshot for the episode's workspace.
    pub fn catalog(&self) -> ToolCatalog {
        ToolCatalog::new(self.entries.iter().map(|(s, _)| s.clone()).collect())
            .expect("registry names are unique")
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.entries.iter().map(|(s, _)| &s.name).collect::<Vec<_>>())
            .finish()
    }
}

fn type_matches(value: &serde_json::Value, ty: ParamType) -> bool {
    match ty {
        ParamType::String => value.is_string(),
        ParamType::Integer => value.is_i64() || value.is_u64(),
        ParamType::Number => value.is_number(),
        ParamType::Boolean => value.is_boolean(),
        ParamType::Array => value.is_array(),
        ParamType::Object => value.is_object(),
    }
}

/// Validates a call against the tool's schema and runs the executor.
/// Never mutates registry state; identical calls against mock tools return
/// identical observations.
pub fn execute(reg: &ToolRegistry, name: &str, arguments: &Arguments) -> Result<String, ToolError> {
    let (schema, executor) = reg
        .get(name)
        .ok_or_else(|| ToolError::new(ToolErrorKind::NotFound, format!("unknown tool `{name}`")))?;

    for p in &schema.parameters {
        match arguments.get(&p.name) {
            None if p.required => {
                return Err(ToolError::new(
                    ToolErrorKind::BadArguments,
                    format!("missing required parameter `{}`", p.name),
                ));
            }
            Some(v) if !type_matches(v, p.param_type) => {
                return Err(ToolError::new(
                    ToolErrorKind::BadArguments,
                    format!("parameter `{}` must be of type {}", p.name, p.param_type.json_schema_type()),
                ));
            }
            _ => {}
        }
    }
    for key in arguments.keys() {
        if !schema.parameters.iter().any(|p| &p.name == key) {
            return Err(ToolError::new(
                ToolErrorKind::BadArguments,
                format!("undeclared parameter `{key}`"),
            ));
        }
    }

    executor(arguments)
}

/// Schemas for the stock tools: `search`, `visit`, and the `noop` utility
/// used by fixtures and never-answering policies.
pub fn default_catalog() -> ToolCatalog {
    ToolCatalog::new(vec![
        search_schema(),
        visit_schema(),
        noop_schema(),
    ])
    .expect("stock names are unique")
}

pub fn search_schema() -> ToolSchema {
    ToolSchema {
        name: "search".into(),
        description: "Search the corpus and return matching page identifiers with previews.".into(),
        parameters: vec![ParamSpec::required("query", ParamType::String, "Search query text.")],
    }
}

pub fn visit_schema() -> ToolSchema {
    ToolSchema {
        name: "visit".into(),
        description: "Fetch the full text of one page by its identifier or URL.".into(),
        parameters: vec![ParamSpec::required("url", ParamType::String, "Page identifier or URL.")],
    }
}

pub fn noop_schema() -> ToolSchema {
    ToolSchema {
        name: "noop".into(),
        description: "Do nothing and acknowledge; useful for pacing or placeholder turns.".into(),
        parameters: vec![ParamSpec::optional("note", ParamType::String, "Optional note to echo.")],
    }
}

fn string_arg<'a>(arguments: &'a Arguments, key: &str) -> &'a str {
    arguments.get(key).and_then(|v| v.as_str()).unwrap_or_default()
}

/// A directory-of-text-files fixture corpus: each `*.txt` file is one page
/// keyed by its file stem.
#[derive(Debug, Clone, Default)]
pub struct MockCorpus {
    pages: BTreeMap<String, String>,
}

impl MockCorpus {
    pub fn from_pages(pages: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { pages: pages.into_iter().collect() }
    }

    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut pages = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                pages.insert(stem, std::fs::read_to_string(&path)?);
            }
        }
        Ok(Self { pages })
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Registry exposing this corpus through `search` and `visit`, plus the
    /// stock `noop`.
    pub fn registry(self) -> ToolRegistry {
        let corpus = Arc::new(self);
        let mut reg = ToolRegistry::new();

        let search_corpus = corpus.clone();
        reg.register(search_schema(), move |args| {
            let query = string_arg(args, "query").to_lowercase();
            let hits: Vec<String> = search_corpus
                .pages
                .iter()
                .filter(|(_, text)| text.to_lowercase().contains(&query))
                .map(|(stem, text)| format!("{stem}: {}", text.lines().next().unwrap_or_default()))
                .collect();
            if hits.is_empty() {
                return Err(ToolError::new(ToolErrorKind::Empty, format!("no results for `{query}`")));
            }
            Ok(format!("results:\n{}", hits.join("\n")))
        });

        let visit_corpus = corpus;
        reg.register(visit_schema(), move |args| {
            let url = string_arg(args, "url");
            visit_corpus
                .pages
                .get(url)
                .cloned()
                .ok_or_else(|| ToolError::new(ToolErrorKind::BadArguments, format!("no such page `{url}`")))
        });

        reg.register(noop_schema(), |args| {
            let note = string_arg(args, "note");
            Ok(if note.is_empty() { "ok".to_string() } else { format!("ok: {note}") })
        });

        reg
    }
}

/// Endpoints for live web tools. `{query}` / `{url}` placeholders in the
/// templates are substituted (percent-encoded) per call.
///
/// This is the adapter point for real search/fetch infrastructure; nothing
/// enables it by default and all tests run on mocks.
#[derive(Debug, Clone)]
pub struct WebAdapterConfig {
    pub search_url: String,
    pub visit_url: String,
    pub timeout: std::time::Duration,
}

fn percent_encode(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for b in raw.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn http_fetch(client: &reqwest::blocking::Client, url: &str) -> Result<String, ToolError> {
    let response = client
        .get(url)
        .send()
        .map_err(|e| ToolError::new(ToolErrorKind::Transport, e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        return Err(ToolError::new(
            ToolErrorKind::Transport,
            format!("status {status} from {url}"),
        ));
    }
    let body = response
        .text()
        .map_err(|e| ToolError::new(ToolErrorKind::Transport, e.to_string()))?;
    if body.trim().is_empty() {
        return Err(ToolError::new(ToolErrorKind::Empty, format!("empty body from {url}")));
    }
    Ok(body)
}

/// Registry backed by live HTTP endpoints, exposing the same `search` /
/// `visit` / `noop` contract as the mocks. Observations are response bodies
/// verbatim; failures surface as transport tool errors.
pub fn web_adapter_registry(config: WebAdapterConfig) -> ToolRegistry {
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .expect("client builds");
    let mut reg = ToolRegistry::new();

    let search_client = client.clone();
    let search_url = config.search_url.clone();
    reg.register(search_schema(), move |args| {
        let query = percent_encode(string_arg(args, "query"));
        http_fetch(&search_client, &search_url.replace("{query}", &query))
    });

    let visit_url = config.visit_url.clone();
    reg.register(visit_schema(), move |args| {
        let url = percent_encode(string_arg(args, "url"));
        http_fetch(&client, &visit_url.replace("{url}", &url))
    });

    reg.register(noop_schema(), |_| Ok("ok".to_string()));
    reg
}

/// Registry whose tools deterministically echo their inputs. Handy when a
/// scripted backend only needs plausible observations.
pub fn echo_registry() -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    reg.register(search_schema(), |args| {
        Ok(format!("results for `{}`: (echo fixture)", string_arg(args, "query")))
    });
    reg.register(visit_schema(), |args| {
        Ok(format!("page `{}` body (echo fixture)", string_arg(args, "url")))
    });
    reg.register(noop_schema(), |args| {
        let note = string_arg(args, "note");
        Ok(if note.is_empty() { "ok".to_string() } else { format!("ok: {note}") })
    });
    reg
}

/// Registry whose every tool fails with the given kind. Test fixture for the
/// environment-error paths.
pub fn failing_registry(kind: ToolErrorKind) -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    for schema in [search_schema(), visit_schema(), noop_schema()] {
        let name = schema.name.clone();
        reg.register(schema, move |_args: &Arguments| {
            Err(ToolError::new(kind, format!("injected failure in `{name}`")))
        });
    }
    reg
}
