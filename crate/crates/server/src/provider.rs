//! Chat-completion adapter for question generation.
//!
//! Speaks the widely used `POST {endpoint}` chat-completions JSON shape. The
//! API key comes from an environment variable and is read at construction.

use std::time::Duration;

use codetrail_core::question::{Generation, GenerationError, GenerationProvider};
use serde_json::{json, Value};

pub struct ChatCompletionProvider {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl ChatCompletionProvider {
    pub fn new(endpoint: &str, model: &str, api_key: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        ChatCompletionProvider {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: api_key.to_string(),
            agent,
        }
    }

    /// Reads the key from `key_var`.
    pub fn from_env(endpoint: &str, model: &str, key_var: &str) -> Result<Self, GenerationError> {
        let key = std::env::var(key_var)
            .map_err(|_| GenerationError::ProviderUnavailable(format!("environment variable {key_var} is not set")))?;
        Ok(Self::new(endpoint, model, &key, Duration::from_secs(60)))
    }
}

/// Splits a reply at its `Expected answer:` line.
pub fn split_reply(text: &str) -> Result<Generation, GenerationError> {
    let mut question = Vec::new();
    let mut answer: Option<String> = None;
    for line in text.lines() {
        match (&mut answer, line.trim_start().strip_prefix("Expected answer:")) {
            (None, Some(rest)) => answer = Some(rest.trim().to_string()),
            (None, None) => question.push(line),
            (Some(a), _) => {
                if !line.trim().is_empty() {
                    if !a.is_empty() {
                        a.push('\n');
                    }
                    a.push_str(line.trim());
                }
            }
        }
    }
    let expected_answer =
        answer.ok_or_else(|| GenerationError::MalformedGeneration("reply has no `Expected answer:` line".into()))?;
    let mut q = question.join("\n").trim().to_string();
    q.push('\n');
    Ok(Generation {
        question: q,
        expected_answer,
    })
}

impl GenerationProvider for ChatCompletionProvider {
    fn name(&self) -> &str {
        "chat_completion"
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<Generation, GenerationError> {
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
            "seed": seed,
        });
        let unavailable = |e: ureq::Error| GenerationError::ProviderUnavailable(e.to_string());
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(unavailable)?;
        let v: Value = resp.body_mut().read_json().map_err(unavailable)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GenerationError::MalformedGeneration("response has no message content".into()))?;
        split_reply(text)
    }
}
