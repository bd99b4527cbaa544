//! OpenAI-compatible chat-completions backend.

use serde_json::{json, Value};

use super::http::{HttpOptions, HttpRunner};
use super::{
    BackendError, BackendInfo, Completion, CompletionBackend, CompletionRequest, BASE_URL_ENV,
};

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
const API_KEY_ENV: &str = "OPENAI_API_KEY";

/// Talks to `POST {base}/chat/completions`.
///
/// The request's sample index is identity metadata for caching layers; live
/// endpoints are sampled fresh on every call, so it is not transmitted.
pub struct OpenAiBackend {
    model: String,
    base_url: String,
    api_key: String,
    runner: HttpRunner,
}

impl OpenAiBackend {
    /// Read the API key from `OPENAI_API_KEY` and the base URL from
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
        Ok(OpenAiBackend {
            model: model.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            runner: HttpRunner::new(&options)?,
        })
    }
}

fn build_body(model: &str, request: &CompletionRequest<'_>) -> Value {
    let messages: Vec<Value> = request
        .messages
        .messages()
        .iter()
        .map(|m| json!({"role": m.role.to_string(), "content": m.content}))
        .collect();
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.params.temperature,
        "top_p": request.params.top_p,
        "max_tokens": request.params.max_tokens,
    });
    if !request.params.stop.is_empty() {
        body["stop"] = json!(request.params.stop);
    }
    body
}

fn parse_response(value: &Value) -> Result<(String, Option<u32>, Option<u32>), BackendError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            BackendError::Protocol("response carries no choices[0].message.content".into())
        })?;
    if text.trim().is_empty() {
        return Err(BackendError::Protocol("provider returned an empty completion".into()));
    }
    let tokens = |field: &str| {
        value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64).map(|n| n as u32)
    };
    Ok((text.to_string(), tokens("prompt_tokens"), tokens("completion_tokens")))
}

impl CompletionBackend for OpenAiBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = build_body(&self.model, request);
        let auth = format!("Bearer {}", self.api_key);
        let (value, latency_ms) =
            self.runner.post_json(&url, &[("authorization", &auth)], &body)?;
        let (text, prompt_tokens, completion_tokens) = parse_response(&value)?;
        Ok(Completion { text, prompt_tokens, completion_tokens, latency_ms })
    }

    fn info(&self) -> BackendInfo {
        BackendInfo { protocol: "openai".into(), model: self.model.clone() }
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
    fn body_carries_messages_and_params() {
        let messages =
            PromptMessages::new(vec![Message::system("sys"), Message::user("hi")]).unwrap();
        let params = SamplingParams::default();
        let body = build_body("gpt-test", &request(&messages, &params));
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["temperature"], 0.5);
        assert_eq!(body["top_p"], 0.4);
        assert_eq!(body["max_tokens"], 1024);
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn body_includes_stop_sequences_when_present() {
        let messages = PromptMessages::new(vec![Message::user("hi")]).unwrap();
        let params = SamplingParams { stop: vec!["END".into()], ..SamplingParams::default() };
        let body = build_body("m", &request(&messages, &params));
        assert_eq!(body["stop"][0], "END");
    }

    #[test]
    fn parses_text_and_usage() {
        let value = json!({
            "choices": [{"message": {"role": "assistant", "content": "Answer: (A)"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 5}
        });
        let (text, pt, ct) = parse_response(&value).unwrap();
        assert_eq!(text, "Answer: (A)");
        assert_eq!(pt, Some(12));
        assert_eq!(ct, Some(5));
    }

    #[test]
    fn usage_is_optional() {
        let value = json!({"choices": [{"message": {"content": "ok"}}]});
        let (text, pt, ct) = parse_response(&value).unwrap();
        assert_eq!(text, "ok");
        assert_eq!(pt, None);
        assert_eq!(ct, None);
    }

    #[test]
    fn missing_content_is_a_protocol_error() {
        let value = json!({"choices": []});
        assert!(matches!(parse_response(&value).unwrap_err(), BackendError::Protocol(_)));
    }

    #[test]
    fn empty_content_is_a_protocol_error() {
        let value = json!({"choices": [{"message": {"content": "  "}}]});
        assert!(matches!(parse_response(&value).unwrap_err(), BackendError::Protocol(_)));
    }
}
