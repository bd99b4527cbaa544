//! A backend that plays back canned responses, for tests and offline runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    BackendError, BackendInfo, Completion, CompletionBackend, CompletionRequest,
};

/// What a [`ScriptedBackend`] serves.
#[derive(Debug, Clone)]
pub enum Script {
    /// Responses popped strictly in call order; one call past the end fails
    /// with [`BackendError::ScriptExhausted`].
    Queue(Vec<String>),
    /// `(required substrings, response)` rules checked in order against the
    /// flattened prompt. The first rule whose substrings all appear wins;
    /// rules replay without limit. No match fails with
    /// [`BackendError::ScriptMiss`].
    Patterns(Vec<(Vec<String>, String)>),
}

/// File form of a script: either `{"queue": [...]}` or
/// `{"patterns": [{"contains": [...], "text": "..."}]}`.
#[derive(Debug, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    queue: Option<Vec<String>>,
    #[serde(default)]
    patterns: Option<Vec<PatternRule>>,
}

#[derive(Debug, Deserialize)]
struct PatternRule {
    contains: Vec<String>,
    text: String,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: Mutex<ScriptState>,
    calls: AtomicUsize,
    model: String,
}

#[derive(Debug)]
enum ScriptState {
    Queue { responses: Vec<String>, next: usize },
    Patterns(Vec<(Vec<String>, String)>),
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let state = match script {
            Script::Queue(responses) => ScriptState::Queue { responses, next: 0 },
            Script::Patterns(rules) => ScriptState::Patterns(rules),
        };
        ScriptedBackend {
            script: Mutex::new(state),
            calls: AtomicUsize::new(0),
            model: "scripted".into(),
        }
    }

    /// Queue of responses served in call order.
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script::Queue(responses.into_iter().map(Into::into).collect()))
    }

    /// One response repeated for every call.
    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new(Script::Patterns(vec![(Vec::new(), text.into())]))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read script {}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("invalid script {}: {e}", path.display())))?;
        let script = match (file.queue, file.patterns) {
            (Some(q), None) => Script::Queue(q),
            (None, Some(p)) => {
                Script::Patterns(p.into_iter().map(|r| (r.contains, r.text)).collect())
            }
            _ => {
                return Err(BackendError::Config(format!(
                    "script {} must define exactly one of \"queue\" or \"patterns\"",
                    path.display()
                )))
            }
        };
        Ok(Self::new(script))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Number of completed calls, successful or not.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut state = self.script.lock().expect("script poisoned");
        let text = match &mut *state {
            ScriptState::Queue { responses, next } => {
                if *next >= responses.len() {
                    return Err(BackendError::ScriptExhausted { served: responses.len() });
                }
                let text = responses[*next].clone();
                *next += 1;
                text
            }
            ScriptState::Patterns(rules) => {
                let haystack = request.messages.flattened();
                rules
                    .iter()
                    .find(|(needles, _)| needles.iter().all(|n| haystack.contains(n.as_str())))
                    .map(|(_, text)| text.clone())
                    .ok_or(BackendError::ScriptMiss)?
            }
        };
        Ok(Completion {
            prompt_tokens: Some(request.messages.flattened().split_whitespace().count() as u32),
            completion_tokens: Some(text.split_whitespace().count() as u32),
            latency_ms: 0,
            text,
        })
    }

    fn info(&self) -> BackendInfo {
        BackendInfo { protocol: "scripted".into(), model: self.model.clone() }
    }
}
