//! Provider-agnostic completion interface.
//!
//! [`OpenAiProvider`] speaks the OpenAI-compatible chat-completions wire format
//! and adds retries, rate limiting and a concurrency cap. [`MockProvider`]
//! answers from substring rules with no network I/O.

mod clock;
mod http;
mod limiter;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Clock, ManualClock, SystemClock};
pub use http::OpenAiProvider;
pub use limiter::{Backoff, ConcurrencyGate, GatePermit, RateLimiter};
pub use mock::{MockProvider, MockRule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("authentication failed with HTTP {status}")]
    AuthFailure { status: u16 },
    #[error("gave up after {attempts} attempts, last failure: {last}")]
    RetriesExhausted { last: String, attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// Connection and sampling settings for an OpenAI-compatible endpoint.
///
/// The API key itself is never stored here: only the name of the environment
/// variable holding it, read on every call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_concurrent: usize,
    pub requests_per_minute: Option<u32>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_tokens: 100,
            temperature: 1.0,
            request_timeout: Duration::from_secs(60),
            max_retries: 5,
            max_concurrent: 4,
            requests_per_minute: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |msg: &str| Err(LlmError::InvalidRequest(msg.to_owned()));
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite number >= 0");
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be positive");
        }
        if self.requests_per_minute == Some(0) {
            return bad("requests_per_minute must be positive when set");
        }
        if self.api_key_env.is_empty() {
            return bad("api_key_env must name an environment variable");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub request_id: String,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
}

impl CompletionRequest {
    pub fn new(prompt_text: impl Into<String>) -> Self {
        CompletionRequest {
            prompt_text: prompt_text.into(),
            request_id: String::new(),
            max_tokens: None,
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    pub fn from_wire(reason: Option<&str>) -> Self {
        match reason {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        }
    }
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinishReason::Stop => "stop",
            FinishReason::Length => "length",
            FinishReason::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
    pub attempt_count: u32,
}

/// The parameters that determine a model's output for a given prompt; part of
/// every cache key.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

/// Anything that turns a prompt into a completion. Shared across worker threads.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;

    /// Effective settings for `request`, after applying its overrides.
    fn settings(&self, request: &CompletionRequest) -> ModelSettings;

    /// How many calls the caller may usefully keep in flight.
    fn max_concurrent(&self) -> usize {
        1
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }

    fn settings(&self, request: &CompletionRequest) -> ModelSettings {
        (**self).settings(request)
    }

    fn max_concurrent(&self) -> usize {
        (**self).max_concurrent()
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }

    fn settings(&self, request: &CompletionRequest) -> ModelSettings {
        (**self).settings(request)
    }

    fn max_concurrent(&self) -> usize {
        (**self).max_concurrent()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finish_reason_mapping() {
        assert_eq!(FinishReason::from_wire(Some("stop")), FinishReason::Stop);
        assert_eq!(FinishReason::from_wire(None), FinishReason::Stop);
        assert_eq!(FinishReason::from_wire(Some("length")), FinishReason::Length);
        assert_eq!(FinishReason::from_wire(Some("content_filter")), FinishReason::Error);
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::default().validate().is_ok());
        let cfg = ProviderConfig { temperature: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ProviderConfig { max_concurrent: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ProviderConfig { requests_per_minute: Some(0), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
