//! Shared HTTP execution: bounded concurrency, retry with exponential
//! backoff, and JSON decoding.

use std::time::{Duration, Instant};

use super::{BackendError, InflightLimiter, RetryPolicy, DEFAULT_MAX_INFLIGHT};

/// Connection options shared by the HTTP backends.
#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub retry: RetryPolicy,
    pub max_inflight: usize,
    pub timeout: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            retry: RetryPolicy::default(),
            max_inflight: DEFAULT_MAX_INFLIGHT,
            timeout: Duration::from_secs(120),
        }
    }
}

pub(super) struct HttpRunner {
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    limiter: InflightLimiter,
}

impl HttpRunner {
    pub fn new(options: &HttpOptions) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpRunner {
            client,
            retry: options.retry.clone(),
            limiter: InflightLimiter::new(options.max_inflight),
        })
    }

    /// POST `body` to `url` with `headers`, retrying transient failures.
    ///
    /// Retries cover transport errors, HTTP 429, and HTTP 5xx. 401/403 fail
    /// immediately as [`BackendError::Auth`]; other client errors and
    /// undecodable payloads fail immediately as [`BackendError::Protocol`].
    /// Returns the decoded JSON and the latency of the successful attempt.
    pub fn post_json(
        &self,
        url: &str,
        headers: &[(&str, &str)],
        body: &serde_json::Value,
    ) -> Result<(serde_json::Value, u64), BackendError> {
        let mut last_failure = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(url, headers, body) {
                Ok(ok) => return Ok(ok),
                Err(Transient(reason)) => {
                    log::warn!("attempt {attempt}/{} against {url} failed: {reason}", self.retry.max_attempts);
                    last_failure = reason;
                }
                Err(Fatal(err)) => return Err(err),
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(BackendError::Exhausted { attempts: self.retry.max_attempts, last: last_failure })
    }

    fn attempt(
        &self,
        url: &str,
        headers: &[(&str, &str)],
        body: &serde_json::Value,
    ) -> Result<(serde_json::Value, u64), AttemptError> {
        // Hold an in-flight permit only while the request is on the wire;
        // backoff sleeps must not occupy a slot.
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let mut request = self.client.post(url).json(body);
        for (name, value) in headers {
            request = request.header(*name, *value);
        }
        let response = request.send().map_err(|e| Transient(format!("transport error: {e}")))?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Fatal(BackendError::Auth { status: status.as_u16() }));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            let body = response.text().unwrap_or_default();
            return Err(Transient(format!("HTTP {status}: {}", snippet(&body))));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(Fatal(BackendError::Protocol(format!(
                "HTTP {status}: {}",
                snippet(&body)
            ))));
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        let text = response
            .text()
            .map_err(|e| Transient(format!("failed reading response body: {e}")))?;
        let value = serde_json::from_str(&text).map_err(|e| {
            Fatal(BackendError::Protocol(format!("undecodable JSON ({e}): {}", snippet(&text))))
        })?;
        Ok((value, latency_ms))
    }
}

enum AttemptError {
    Transient(String),
    Fatal(BackendError),
}
use AttemptError::{Fatal, Transient};

fn snippet(body: &str) -> &str {
    let end = body
        .char_indices()
        .take(200)
        .last()
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    &body[..end]
}
