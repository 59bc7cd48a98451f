//! Question files and scripted-completion fixtures.
//!
//! Questions: JSONL, one `{"id": ..., "question": ...}` object per line.
//! Scripts: JSONL, one `{"id": ..., "completions": [raw, ...]}` object per
//! line; completion texts may be intentionally malformed for rejection
//! fixtures.

use std::collections::BTreeMap;
use std::path::Path;

use agentfold::backends::{BackendError, ChatBackend, GenerationParams};
use agentfold::collector::QuestionSpec;
use agentfold::protocol::split_sections;
use serde::Deserialize;

pub fn load_questions(path: &Path) -> Result<Vec<QuestionSpec>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read questions {}: {e}", path.display()))?;
    let mut questions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionSpec = serde_json::from_str(line)
            .map_err(|e| format!("{}:{}: bad question object: {e}", path.display(), i + 1))?;
        questions.push(q);
    }
    if questions.is_empty() {
        return Err(format!("{}: no questions", path.display()));
    }
    Ok(questions)
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptFixture {
    id: String,
    completions: Vec<String>,
}

/// Scripted teacher covering several questions: completions are routed by
/// matching the prompt's question section back to the question text.
pub struct RoutingScriptedBackend {
    by_question: Vec<(String, Vec<String>)>,
}

impl RoutingScriptedBackend {
    pub fn load(path: &Path, questions: &[QuestionSpec]) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read script {}: {e}", path.display()))?;
        let mut by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fixture: ScriptFixture = serde_json::from_str(line)
                .map_err(|e| format!("{}:{}: bad script object: {e}", path.display(), i + 1))?;
            by_id.insert(fixture.id, fixture.completions);
        }
        let mut by_question = Vec::new();
        for q in questions {
            let completions = by_id
                .remove(&q.id)
                .ok_or_else(|| format!("{}: no script for question `{}`", path.display(), q.id))?;
            by_question.push((q.question.clone(), completions));
        }
        Ok(Self { by_question })
    }

    /// The script for one question id, for per-question episode runs.
    pub fn script_for(&self, question_text: &str) -> Option<&[String]> {
        self.by_question
            .iter()
            .find(|(q, _)| q == question_text)
            .map(|(_, c)| c.as_slice())
    }
}

impl ChatBackend for RoutingScriptedBackend {
    fn complete(&self, prompt: &str, step: u32, _params: &GenerationParams) -> Result<String, BackendError> {
        let question_body = split_sections(prompt)
            .into_iter()
            .find(|(h, _)| h == "Question")
            .map(|(_, b)| b)
            .unwrap_or_default();
        let script = self
            .script_for(&question_body)
            .ok_or_else(|| BackendError::Transport("prompt does not match any scripted question".into()))?;
        script
            .get(step as usize - 1)
            .cloned()
            .ok_or(BackendError::ScriptExhausted(step))
    }
}
