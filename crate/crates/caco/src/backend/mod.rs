//! Completion backends.
//!
//! Everything above this layer talks to a language model exclusively through
//! [`CompletionBackend`]. The trait is synchronous: agent fan-out is done
//! with plain threads, so a backend only has to be `Send + Sync`.

mod anthropic;
mod cache;
mod http;
mod instrument;
mod openai;
mod scripted;

pub use anthropic::AnthropicBackend;
pub use cache::{CacheStore, CachedBackend};
pub use http::HttpOptions;
pub use instrument::{AgentRole, CallRecord, InstrumentedBackend, TelemetrySink};
pub use openai::OpenAiBackend;
pub use scripted::{Script, ScriptedBackend};

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Environment variable overriding the provider base URL for HTTP backends.
pub const BASE_URL_ENV: &str = "CACO_BASE_URL";

/// Speaker of a prompt message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        f.write_str(s)
    }
}

/// One turn of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// A non-empty ordered prompt whose first message is a system or user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Message>", into = "Vec<Message>")]
pub struct PromptMessages(Vec<Message>);

impl PromptMessages {
    pub fn new(messages: Vec<Message>) -> Result<Self, BackendError> {
        match messages.first() {
            None => Err(BackendError::Config("prompt must contain at least one message".into())),
            Some(m) if m.role == Role::Assistant => {
                Err(BackendError::Config("prompt cannot open with an assistant turn".into()))
            }
            Some(_) => Ok(PromptMessages(messages)),
        }
    }

    pub fn messages(&self) -> &[Message] {
        &self.0
    }

    /// All message contents joined with newlines, used for pattern matching
    /// and digests.
    pub fn flattened(&self) -> String {
        let parts: Vec<&str> = self.0.iter().map(|m| m.content.as_str()).collect();
        parts.join("\n")
    }
}

impl TryFrom<Vec<Message>> for PromptMessages {
    type Error = BackendError;

    fn try_from(v: Vec<Message>) -> Result<Self, Self::Error> {
        PromptMessages::new(v)
    }
}

impl From<PromptMessages> for Vec<Message> {
    fn from(p: PromptMessages) -> Vec<Message> {
        p.0
    }
}

/// Decoding parameters sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 0.5, top_p: 0.4, max_tokens: 1024, stop: Vec::new() }
    }
}

impl SamplingParams {
    /// Wider sampling profile used when several diverse samples are wanted
    /// from one prompt.
    pub fn self_consistency() -> Self {
        SamplingParams { temperature: 0.8, top_p: 0.5, ..SamplingParams::default() }
    }
}

/// Identity of one stochastic sample for a given prompt shape.
///
/// Two requests with equal messages, params, and sample index are the same
/// draw: a caching layer may replay one for the other. `Auto` asks the cache
/// to number repeat requests itself, in arrival order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSpec {
    Auto,
    Index(u32),
}

/// A fully-specified completion request.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub messages: &'a PromptMessages,
    pub params: &'a SamplingParams,
    pub sample: SampleSpec,
}

/// A model response plus call telemetry.
///
/// Telemetry travels with the text so that a cache hit can reproduce the
/// original call record exactly; replayed runs then serialize byte-for-byte
/// identically to the runs that populated the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
    pub latency_ms: u64,
}

/// Static description of a backend, recorded in run logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub protocol: String,
    pub model: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Credentials rejected. Never retried.
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    /// Retryable failures kept failing until the retry budget ran out.
    #[error("backend exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    /// The provider answered but the payload was unusable.
    #[error("malformed provider response: {0}")]
    Protocol(String),
    /// A scripted backend ran past the end of its queue.
    #[error("script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    /// No scripted pattern matched the prompt.
    #[error("no scripted response matches the prompt")]
    ScriptMiss,
    #[error("backend configuration error: {0}")]
    Config(String),
}

/// A language-model completion endpoint.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError>;

    fn info(&self) -> BackendInfo;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn info(&self) -> BackendInfo {
        (**self).info()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn info(&self) -> BackendInfo {
        (**self).info()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn info(&self) -> BackendInfo {
        (**self).info()
    }
}

/// Exponential backoff for transient HTTP failures (429, 5xx, timeouts).
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Policy with no sleep between attempts, for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, factor: 2.0 }
    }

    /// Delay after the `attempt`-th failure (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let scale = self.factor.powi(attempt.saturating_sub(1) as i32);
        self.base_delay.mul_f64(scale)
    }
}

/// Counting semaphore bounding in-flight requests per backend.
#[derive(Debug)]
pub struct InflightLimiter {
    capacity: usize,
    state: Mutex<usize>,
    freed: Condvar,
}

/// Default bound on concurrent requests to one HTTP endpoint.
pub const DEFAULT_MAX_INFLIGHT: usize = 8;

impl InflightLimiter {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "limiter capacity must be positive");
        InflightLimiter { capacity, state: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut in_flight = self.state.lock().expect("limiter poisoned");
        while *in_flight >= self.capacity {
            in_flight = self.freed.wait(in_flight).expect("limiter poisoned");
        }
        *in_flight += 1;
        InflightPermit { limiter: self }
    }
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.limiter.state.lock().expect("limiter poisoned");
        *in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Canonical JSON identity of a request: keys sorted, no whitespace, and the
/// sample index spelt out. Equal draws produce equal strings.
pub fn canonical_request_json(
    model: &str,
    messages: &PromptMessages,
    params: &SamplingParams,
    sample_index: Option<u32>,
) -> String {
    use serde_json::{json, Map, Value};

    let turns: Vec<Value> = messages
        .messages()
        .iter()
        .map(|m| {
            // Build each turn with explicit key order (BTreeMap-backed map
            // keeps serde_json output sorted when "preserve_order" is off,
            // but we sort defensively anyway).
            let mut turn = Map::new();
            turn.insert("content".into(), Value::String(m.content.clone()));
            turn.insert("role".into(), Value::String(m.role.to_string()));
            Value::Object(turn)
        })
        .collect();

    let mut root = Map::new();
    root.insert("messages".into(), Value::Array(turns));
    root.insert("model".into(), Value::String(model.to_string()));
    root.insert(
        "params".into(),
        json!({
            "max_tokens": params.max_tokens,
            "stop": params.stop,
            "temperature": params.temperature,
            "top_p": params.top_p,
        }),
    );
    match sample_index {
        Some(i) => root.insert("sample_index".into(), Value::Number(i.into())),
        None => root.insert("sample_index".into(), Value::Null),
    };
    Value::Object(root).to_string()
}

/// Hex SHA-256 of a prompt's canonical form, used in telemetry records.
pub fn prompt_digest(messages: &PromptMessages) -> String {
    text_digest(&messages.flattened())
}

/// Hex SHA-256 of arbitrary text.
pub fn text_digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}
