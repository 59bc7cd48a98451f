//! File-backed configuration and the flag-over-file merge.
//!
//! The config file is TOML; every key mirrors a CLI flag one-to-one and flags
//! always win (see `docs/config.md`). Each command echoes its fully resolved
//! settings into the output directory as `config_resolved.toml`, and stamps
//! wall-clock time only into the `run_meta.json` sidecar so the primary
//! outputs stay byte-reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub collect: CollectSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub max_turns: Option<u32>,
    pub max_env_errors: Option<u32>,
    pub display_offset: Option<i32>,
    pub policy: Option<String>,
    pub salvage_answer: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub episodes: Option<u64>,
    pub turns: Option<u32>,
    pub nodes: Option<usize>,
    pub noise: Option<usize>,
    pub loss: Option<f64>,
    pub horizon: Option<u32>,
    pub trials: Option<u64>,
    pub policy: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub max_step_retries: Option<u32>,
    pub max_env_errors: Option<u32>,
    pub max_turns: Option<u32>,
    pub display_offset: Option<i32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}

/// Writes the resolved settings and the timestamp sidecar into `out_dir`.
pub fn echo_resolved<T: Serialize>(out_dir: &Path, resolved: &T) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let toml_text = toml::to_string_pretty(resolved)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    std::fs::write(out_dir.join("config_resolved.toml"), toml_text)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    std::fs::write(
        out_dir.join("run_meta.json"),
        format!("{{\"created_unix\":{created}}}\n"),
    )
}
