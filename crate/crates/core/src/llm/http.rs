use std::sync::Arc;

use log::{debug, warn};
use serde_json::{json, Value as Json};

use super::{
    Backoff, Clock, CompletionProvider, CompletionRequest, CompletionResponse, ConcurrencyGate, FinishReason,
    LlmError, ModelSettings, ProviderConfig, RateLimiter, SystemClock,
};

/// Client for `POST {base_url}/chat/completions`.
pub struct OpenAiProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
    gate: ConcurrencyGate,
    backoff: Backoff,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiProvider").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Outcome of one HTTP attempt.
enum Attempt {
    Done(String, FinishReason),
    Retryable(String),
    Fatal(LlmError),
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        Self::with_clock(config, Arc::new(SystemClock::new()))
    }

    /// Uses `clock` for rate limiting and backoff sleeps.
    pub fn with_clock(config: ProviderConfig, clock: Arc<dyn Clock>) -> Result<Self, LlmError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(OpenAiProvider {
            limiter: config.requests_per_minute.map(RateLimiter::new),
            gate: ConcurrencyGate::new(config.max_concurrent),
            agent,
            backoff: Backoff::default(),
            clock,
            config,
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn send(&self, api_key: &str, body: &Json) -> Attempt {
        let result = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {api_key}"))
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retryable(format!("timeout ({t})")),
            Err(
                e @ (ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::Protocol(_)),
            ) => return Attempt::Retryable(e.to_string()),
            Err(e) => return Attempt::Fatal(LlmError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retryable(format!("timeout ({t})")),
            Err(e) => return Attempt::Retryable(format!("reading body: {e}")),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((content, reason)) => Attempt::Done(content, reason),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::AuthFailure { status }),
            429 | 500..=599 => Attempt::Retryable(format!("HTTP {status}")),
            _ => Attempt::Fatal(LlmError::HttpStatus {
                status,
                body: text.chars().take(500).collect(),
            }),
        }
    }
}

fn parse_completion(body: &str) -> Result<(String, FinishReason), LlmError> {
    let json: Json =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let choice = json
        .get("choices")
        .and_then(Json::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| LlmError::MalformedResponse("missing `choices`".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Json::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("first choice has no `message.content`".into()))?;
    let reason = FinishReason::from_wire(choice.get("finish_reason").and_then(Json::as_str));
    Ok((content.to_owned(), reason))
}

impl CompletionProvider for OpenAiProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt_text.is_empty() {
            return Err(LlmError::InvalidRequest("prompt text is empty".into()));
        }
        let api_key = std::env::var(&self.config.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(self.config.api_key_env.clone()))?;
        let settings = self.settings(request);
        let body = json!({
            "model": settings.model,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "max_tokens": settings.max_tokens,
            "temperature": settings.temperature,
        });

        let _permit = self.gate.acquire();
        let started = self.clock.now();
        let mut rng = rand::thread_rng();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            match self.send(&api_key, &body) {
                Attempt::Done(text, finish_reason) => {
                    return Ok(CompletionResponse {
                        text,
                        finish_reason,
                        latency: self.clock.now().saturating_sub(started),
                        attempt_count: attempts,
                    });
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retryable(reason) => {
                    if attempts > self.config.max_retries {
                        warn!("request {} failed after {attempts} attempts: {reason}", request.request_id);
                        return Err(LlmError::RetriesExhausted { last: reason, attempts });
                    }
                    let delay = self.backoff.delay(attempts, &mut rng);
                    debug!("request {} attempt {attempts} failed ({reason}), retrying in {delay:?}", request.request_id);
                    self.clock.sleep(delay);
                }
            }
        }
    }

    fn settings(&self, request: &CompletionRequest) -> ModelSettings {
        ModelSettings {
            model: self.config.model.clone(),
            max_tokens: request.max_tokens.unwrap_or(self.config.max_tokens),
            temperature: request.temperature.unwrap_or(self.config.temperature),
        }
    }

    fn max_concurrent(&self) -> usize {
        self.config.max_concurrent
    }
}
