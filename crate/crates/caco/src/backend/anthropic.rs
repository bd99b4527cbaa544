//! Anthropic messages-API backend.

use serde_json::{json, Value};

use super::http::{HttpOptions, HttpRunner};
use super::{
    BackendError, BackendInfo, Completion, CompletionBackend, CompletionRequest, Role,
    BASE_URL_ENV,
};

const DEFAULT_BASE_URL: &str = "https://api.anthropic.com";
const API_KEY_ENV: &str = "ANTHROPIC_API_KEY";
const API_VERSION: &str = "2023-06-01";

/// Talks to `POST {base}/v1/messages`.
///
/// System messages are lifted into the top-level `system` field; the
/// remaining turns become the `messages` array. Text content blocks in the
/// response are concatenated.
pub struct AnthropicBackend {
    model: String,
    base_url: String,
    api_key: String,
    runner: HttpRunner,
}

impl AnthropicBackend {
    /// Read the API key from `ANTHROPIC_API_KEY` and the base URL from
    /// `CACO_BASE_URL` (falling back to the public endpoint). Credentials
    /// are taken from the environment only.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Self::new(base_url, api_key, model, HttpOptions::default())
    }

    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        options: HttpOptions,
    ) -> Result<Self, BackendError> {
        Ok(AnthropicBackend {
            model: model.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            runner: HttpRunner::new(&options)?,
        })
    }
}

fn build_body(model: &str, request: &CompletionRequest<'_>) -> Value {
    let mut system_parts: Vec<&str> = Vec::new();
    let mut turns: Vec<Value> = Vec::new();
    for m in request.messages.messages() {
        match m.role {
            Role::System => system_parts.push(&m.content),
            Role::User | Role::Assistant => {
                turns.push(json!({"role": m.role.to_string(), "content": m.content}));
            }
        }
    }
    let mut body = json!({
        "model": model,
        "messages": turns,
        "max_tokens": request.params.max_tokens,
        "temperature": request.params.temperature,
        "top_p": request.params.top_p,
    });
    if !system_parts.is_empty() {
        body["system"] = json!(system_parts.join("\n\n"));
    }
    if !request.params.stop.is_empty() {
        body["stop_sequences"] = json!(request.params.stop);
    }
    body
}

fn parse_response(value: &Value) -> Result<(String, Option<u32>, Option<u32>), BackendError> {
    let blocks = value
        .get("content")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Protocol("response carries no content array".into()))?;
    let text: String = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect();
    if text.trim().is_empty() {
        return Err(BackendError::Protocol("provider returned an empty completion".into()));
    }
    let tokens = |field: &str| {
        value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64).map(|n| n as u32)
    };
    Ok((text, tokens("input_tokens"), tokens("output_tokens")))
}

impl CompletionBackend for AnthropicBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let url = format!("{}/v1/messages", self.base_url);
        let body = build_body(&self.model, request);
        let headers =
            [("x-api-key", self.api_key.as_str()), ("anthropic-version", API_VERSION)];
        let (value, latency_ms) = self.runner.post_json(&url, &headers, &body)?;
        let (text, prompt_tokens, completion_tokens) = parse_response(&value)?;
        Ok(Completion { text, prompt_tokens, completion_tokens, latency_ms })
    }

    fn info(&self) -> BackendInfo {
        BackendInfo { protocol: "anthropic".into(), model: self.model.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Message, PromptMessages, SampleSpec, SamplingParams};

    fn request<'a>(messages: &'a PromptMessages, params: &'a SamplingParams) -> CompletionRequest<'a> {
        CompletionRequest { messages, params, sample: SampleSpec::Index(0) }
    }

    #[test]
    fn system_turns_are_lifted_out() {
        let messages = PromptMessages::new(vec![
            Message::system("first"),
            Message::system("second"),
            Message::user("question"),
            Message::assistant("demo"),
            Message::user("real question"),
        ])
        .unwrap();
        let params = SamplingParams::default();
        let body = build_body("claude-test", &request(&messages, &params));
        assert_eq!(body["system"], "first\n\nsecond");
        let turns = body["messages"].as_array().unwrap();
        assert_eq!(turns.len(), 3);
        assert_eq!(turns[0]["role"], "user");
        assert_eq!(turns[1]["role"], "assistant");
        assert_eq!(turns[2]["content"], "real question");
        assert_eq!(body["max_tokens"], 1024);
    }

    #[test]
    fn no_system_field_without_system_turns() {
        let messages = PromptMessages::new(vec![Message::user("q")]).unwrap();
        let params = SamplingParams::default();
        let body = build_body("m", &request(&messages, &params));
        assert!(body.get("system").is_none());
    }

    #[test]
    fn concatenates_text_blocks() {
        let value = json!({
            "content": [
                {"type": "text", "text": "part one "},
                {"type": "tool_use", "id": "x"},
                {"type": "text", "text": "part two"}
            ],
            "usage": {"input_tokens": 7, "output_tokens": 3}
        });
        let (text, pt, ct) = parse_response(&value).unwrap();
        assert_eq!(text, "part one part two");
        assert_eq!(pt, Some(7));
        assert_eq!(ct, Some(3));
    }

    #[test]
    fn empty_content_is_a_protocol_error() {
        let value = json!({"content": []});
        assert!(matches!(parse_response(&value).unwrap_err(), BackendError::Protocol(_)));
        let value = json!({"content": [{"type": "text", "text": "   "}]});
        assert!(matches!(parse_response(&value).unwrap_err(), BackendError::Protocol(_)));
    }

    #[test]
    fn missing_content_is_a_protocol_error() {
        let value = json!({"id": "msg"});
        assert!(matches!(parse_response(&value).unwrap_err(), BackendError::Protocol(_)));
    }
}
