//! Per-call telemetry capture.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    prompt_digest, text_digest, BackendError, BackendInfo, Completion, CompletionBackend,
    CompletionRequest,
};

/// Which agent issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Reasoner,
    Evaluator,
    Baseline,
}

/// One model call, reduced to content digests plus telemetry. Hashing the
/// texts keeps run logs compact while still pinning exact byte content for
/// replay comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: AgentRole,
    pub prompt_sha256: String,
    pub completion_sha256: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
    pub latency_ms: u64,
}

/// Shared collector for [`CallRecord`]s, in call-completion order.
#[derive(Debug, Clone, Default)]
pub struct TelemetrySink {
    records: Arc<Mutex<Vec<CallRecord>>>,
}

impl TelemetrySink {
    pub fn new() -> Self {
        TelemetrySink::default()
    }

    fn push(&self, record: CallRecord) {
        self.records.lock().expect("sink poisoned").push(record);
    }

    /// Drain everything recorded so far.
    pub fn take(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.records.lock().expect("sink poisoned"))
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Labels every call with an agent role and records it into a sink.
pub struct InstrumentedBackend<B> {
    inner: B,
    role: AgentRole,
    sink: TelemetrySink,
}

impl<B: CompletionBackend> InstrumentedBackend<B> {
    pub fn new(inner: B, role: AgentRole, sink: TelemetrySink) -> Self {
        InstrumentedBackend { inner, role, sink }
    }
}

impl<B: CompletionBackend> CompletionBackend for InstrumentedBackend<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let completion = self.inner.complete(request)?;
        self.sink.push(CallRecord {
            role: self.role,
            prompt_sha256: prompt_digest(request.messages),
            completion_sha256: text_digest(&completion.text),
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
            latency_ms: completion.latency_ms,
        });
        Ok(completion)
    }

    fn info(&self) -> BackendInfo {
        self.inner.info()
    }
}
