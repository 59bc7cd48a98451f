//! Chat-completion backends.
//!
//! The engine is backend-agnostic: anything implementing [`ChatBackend`]
//! drives an episode, and identical completion texts produce identical engine
//! behavior. Two implementations ship here: a [`ScriptedBackend`] that replays
//! canned completions by step (deterministic, used for all LLM-free testing)
//! and an [`HttpBackend`] speaking the OpenAI-compatible chat-completions
//! protocol (documented in `docs/backend-wire.md`).
//!
//! Backends are stateless across calls and must accept concurrent independent
//! calls; the HTTP client enforces a configurable in-flight cap.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{serialize_response, AgentResponse};

/// Environment variable naming the chat-completions base URL.
pub const ENV_API_BASE: &str = "AGENTFOLD_API_BASE";
/// Environment variable holding the bearer token.
pub const ENV_API_KEY: &str = "AGENTFOLD_API_KEY";
/// Environment variable naming the model id.
pub const ENV_MODEL: &str = "AGENTFOLD_MODEL";

/// Default system message instructing the tagged output format. Versioned:
/// changing the wording must never change parser behavior.
pub const SYSTEM_TEMPLATE: &str = include_str!("../assets/system_template.txt");
pub const SYSTEM_TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected")]
    AuthRejected,
    #[error("quota exceeded")]
    QuotaExceeded,
    #[error("script exhausted at step {0}")]
    ScriptExhausted(u32),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether the engine's retry policy should re-attempt this failure.
    /// Transport problems and quota pushback are transient; auth rejection
    /// and script exhaustion are not.
    pub fn retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::QuotaExceeded)
    }
}

/// Sampling parameters passed through to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_id: "scripted".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_output_tokens == 0 {
            return Err(BackendError::Config("max_output_tokens must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// The reasoning model behind a chat-completion interface.
///
/// `step` is the 1-based index of the step being executed; scripted backends
/// key on it, live backends ignore it. Implementations must be stateless
/// across calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, step: u32, params: &GenerationParams) -> Result<String, BackendError>;
}

/// Replays a fixed sequence of completions keyed by step. Deterministic:
/// identical scripts yield identical episodes.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    completions: Vec<String>,
}

impl ScriptedBackend {
    /// Script of raw completion texts (step 1 first). Raw texts may be
    /// intentionally malformed for rejection fixtures.
    pub fn from_raw(completions: Vec<String>) -> Self {
        Self { completions }
    }

    /// Script of structured responses, serialized to canonical form on demand.
    pub fn from_responses(responses: &[AgentResponse]) -> Self {
        Self {
            completions: responses.iter().map(serialize_response).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    /// The scripted completion for `step`, or `ScriptExhausted`.
    pub fn entry(&self, step: u32) -> Result<String, BackendError> {
        self.completions
            .get(step.saturating_sub(1) as usize)
            .cloned()
            .ok_or(BackendError::ScriptExhausted(step))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str, step: u32, _params: &GenerationParams) -> Result<String, BackendError> {
        self.entry(step)
    }
}

/// Retry policy for transient backend failures: `max_retries` re-attempts
/// with exponential backoff starting at `base_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Policy with no waiting, for tests.
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_delay: Duration::ZERO }
    }
}

/// Calls the backend, retrying retryable failures per the policy. Returns the
/// completion together with the number of retries that were needed.
pub fn complete_with_retries(
    backend: &dyn ChatBackend,
    prompt: &str,
    step: u32,
    params: &GenerationParams,
    policy: &RetryPolicy,
) -> Result<(String, u32), BackendError> {
    let mut attempt = 0u32;
    loop {
        match backend.complete(prompt, step, params) {
            Ok(text) => return Ok((text, attempt)),
            Err(err) if err.retryable() && attempt < policy.max_retries => {
                let delay = policy.base_delay * 2u32.saturating_pow(attempt);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

/// Counting semaphore bounding concurrent HTTP calls.
struct InFlightGate {
    permits: Mutex<u32>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(cap: u32) -> Self {
        Self { permits: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

/// Live client for an OpenAI-compatible `/chat/completions` endpoint.
///
/// Each call sends a two-message conversation (the system template plus the
/// rendered workspace as the user message) and returns the assistant text
/// verbatim. Concurrent calls are bounded by the in-flight cap (default 8).
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    system_template: String,
    gate: InFlightGate,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("client builds"),
            system_template: SYSTEM_TEMPLATE.to_string(),
            gate: InFlightGate::new(8),
        }
    }

    /// Reads `AGENTFOLD_API_BASE` and `AGENTFOLD_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        Ok(Self::new(base, key))
    }

    pub fn with_system_template(mut self, template: impl Into<String>) -> Self {
        self.system_template = template.into();
        self
    }

    pub fn with_max_in_flight(mut self, cap: u32) -> Self {
        self.gate = InFlightGate::new(cap);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, prompt: &str, _step: u32, params: &GenerationParams) -> Result<String, BackendError> {
        params.validate()?;
        let body = WireRequest {
            model: &params.model_id,
            messages: vec![
                WireMessage { role: "system", content: &self.system_template },
                WireMessage { role: "user", content: prompt },
            ],
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
            stop: params.stop_sequences.clone(),
        };

        self.gate.acquire();
        let result = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send();
        self.gate.release();

        let response = result.map_err(|e| BackendError::Transport(e.to_string()))?;
        match response.status().as_u16() {
            200..=299 => {}
            401 | 403 => return Err(BackendError::AuthRejected),
            429 => return Err(BackendError::QuotaExceeded),
            code => {
                let text = response.text().unwrap_or_default();
                return Err(BackendError::Transport(format!("status {code}: {text}")));
            }
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("response has no choices".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Action;

    fn response(text: &str) -> AgentResponse {
        AgentResponse {
            thinking: "t".into(),
            fold: None,
            explanation: "e".into(),
            action: Action::final_answer(text),
        }
    }

    #[test]
    fn scripted_backend_replays_by_step() {
        let backend = ScriptedBackend::from_responses(&[response("one"), response("two"), response("three")]);
        let params = GenerationParams::default();
        let second = backend.complete("ignored", 2, &params).unwrap();
        assert_eq!(second, serialize_response(&response("two")));
    }

    #[test]
    fn script_exhaustion_is_reported() {
        let backend = ScriptedBackend::from_responses(&[response("only")]);
        let err = backend.complete("x", 4, &GenerationParams::default()).unwrap_err();
        assert_eq!(err, BackendError::ScriptExhausted(4));
    }

    #[test]
    fn scripted_runs_are_reproducible() {
        let backend = ScriptedBackend::from_raw(vec!["a".into(), "b".into()]);
        let params = GenerationParams::default();
        assert_eq!(
            backend.complete("p", 1, &params).unwrap(),
            backend.complete("p", 1, &params).unwrap()
        );
    }

    #[test]
    fn retries_stop_on_non_retryable() {
        struct AlwaysAuth;
        impl ChatBackend for AlwaysAuth {
            fn complete(&self, _: &str, _: u32, _: &GenerationParams) -> Result<String, BackendError> {
                Err(BackendError::AuthRejected)
            }
        }
        let err = complete_with_retries(&AlwaysAuth, "p", 1, &GenerationParams::default(), &RetryPolicy::immediate(5))
            .unwrap_err();
        assert_eq!(err, BackendError::AuthRejected);
    }

    #[test]
    fn retries_recover_from_transient_failures() {
        use std::sync::atomic::{AtomicU32, Ordering};
        struct FlakyOnce(AtomicU32);
        impl ChatBackend for FlakyOnce {
            fn complete(&self, _: &str, _: u32, _: &GenerationParams) -> Result<String, BackendError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    Err(BackendError::Transport("first attempt times out".into()))
                } else {
                    Ok("fine".into())
                }
            }
        }
        let backend = FlakyOnce(AtomicU32::new(0));
        let (text, retries) =
            complete_with_retries(&backend, "p", 1, &GenerationParams::default(), &RetryPolicy::immediate(2)).unwrap();
        assert_eq!(text, "fine");
        assert_eq!(retries, 1);
    }

    #[test]
    fn params_validation_rejects_zero_tokens() {
        let params = GenerationParams { max_output_tokens: 0, ..Default::default() };
        assert!(params.validate().is_err());
    }
}
