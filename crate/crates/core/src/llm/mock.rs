use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionRequest, CompletionResponse, FinishReason, LlmError, ModelSettings};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub reply: String,
}

impl MockRule {
    pub fn new(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        MockRule {
            pattern: pattern.into(),
            reply: reply.into(),
        }
    }
}

/// Offline provider: the first rule whose pattern occurs in the prompt wins,
/// otherwise the default reply. Records every prompt it receives.
#[derive(Debug)]
pub struct MockProvider {
    rules: Vec<MockRule>,
    default_reply: String,
    delay: Duration,
    max_concurrent: usize,
    received: Mutex<Vec<String>>,
}

impl MockProvider {
    pub fn new(rules: Vec<MockRule>, default_reply: impl Into<String>) -> Self {
        MockProvider {
            rules,
            default_reply: default_reply.into(),
            delay: Duration::ZERO,
            max_concurrent: 1,
            received: Mutex::new(Vec::new()),
        }
    }

    /// Sleeps this long inside every call, to make in-flight work observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_max_concurrent(mut self, n: usize) -> Self {
        self.max_concurrent = n.max(1);
        self
    }

    pub fn reply_for(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.pattern))
            .map_or(self.default_reply.as_str(), |r| r.reply.as_str())
    }

    pub fn received(&self) -> Vec<String> {
        self.received.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.received.lock().unwrap().len()
    }
}

impl CompletionProvider for MockProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt_text.is_empty() {
            return Err(LlmError::InvalidRequest("prompt text is empty".into()));
        }
        self.received.lock().unwrap().push(request.prompt_text.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(CompletionResponse {
            text: self.reply_for(&request.prompt_text).to_owned(),
            finish_reason: FinishReason::Stop,
            latency: self.delay,
            attempt_count: 1,
        })
    }

    fn settings(&self, request: &CompletionRequest) -> ModelSettings {
        ModelSettings {
            model: "mock".into(),
            max_tokens: request.max_tokens.unwrap_or(0),
            temperature: request.temperature.unwrap_or(0.0),
        }
    }

    fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }
}
