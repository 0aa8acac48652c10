//! Pluggable chat backends for agent calls.
//!
//! [`ScriptedTransport`] answers every prompt from the deterministic policies
//! in [`super::scripted`] — its replies are serialized JSON that goes through
//! the same parser as live responses, so workflows are testable offline and
//! transcripts replay exactly. [`EndpointTransport`] talks to an
//! OpenAI-compatible chat-completions endpoint over HTTP.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use thiserror::Error;

use super::scripted::scripted_agent;
use super::{AgentContext, AgentRole};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("malformed completion payload: {0}")]
    Protocol(String),
    #[error("API key environment variable '{0}' is not set")]
    MissingApiKey(String),
    #[error("scripted policy: {0}")]
    Scripted(String),
}

/// A completion backend. Implementations count their calls so budget
/// accounting and single-call guarantees are checkable from outside.
pub trait Transport: Sync {
    fn name(&self) -> &'static str;

    /// Answer one prompt. The role and context are available so offline
    /// implementations can compute an answer instead of generating text.
    fn complete(
        &self,
        role: AgentRole,
        ctx: &AgentContext,
        prompt: &str,
    ) -> Result<String, TransportError>;

    /// Total completions attempted through this transport.
    fn calls(&self) -> usize;
}

/// Deterministic offline transport backed by the scripted role policies.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for ScriptedTransport {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn complete(
        &self,
        role: AgentRole,
        ctx: &AgentContext,
        _prompt: &str,
    ) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response =
            scripted_agent(role, ctx).map_err(|e| TransportError::Scripted(e.to_string()))?;
        serde_json::to_string_pretty(&response.to_value())
            .map_err(|e| TransportError::Scripted(e.to_string()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Where and how to reach a chat-completions endpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the completions route.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "AMPSIZER_API_KEY".into(),
            temperature: 0.2,
            timeout_secs: 120,
        }
    }
}

/// Build the request payload for one prompt. Pure, so the wire shape is
/// testable without a server.
pub fn build_request_body(config: &EndpointConfig, prompt: &str) -> serde_json::Value {
    serde_json::json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": [
            { "role": "user", "content": prompt }
        ],
    })
}

/// Pull the assistant text out of a chat-completions response payload.
pub fn extract_content(payload: &serde_json::Value) -> Result<String, TransportError> {
    payload
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| {
            TransportError::Protocol("no choices[0].message.content in response".into())
        })
}

/// HTTP transport speaking the OpenAI-compatible messages/choices protocol.
pub struct EndpointTransport {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl EndpointTransport {
    pub fn new(config: EndpointConfig) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(EndpointTransport {
            config,
            client,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }
}

impl Transport for EndpointTransport {
    fn name(&self) -> &'static str {
        "endpoint"
    }

    fn complete(
        &self,
        _role: AgentRole,
        _ctx: &AgentContext,
        prompt: &str,
    ) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| TransportError::MissingApiKey(self.config.api_key_env.clone()))?;
        let response = self
            .client
            .post(&self.config.url)
            .bearer_auth(key)
            .json(&build_request_body(&self.config, prompt))
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let payload: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        extract_content(&payload)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_has_messages_shape() {
        let cfg = EndpointConfig {
            model: "sizing-assistant".into(),
            ..Default::default()
        };
        let body = build_request_body(&cfg, "hello");
        assert_eq!(body["model"], "sizing-assistant");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert!(body["temperature"].as_f64().is_some());
    }

    #[test]
    fn content_extraction_follows_choices_path() {
        let payload = serde_json::json!({
            "choices": [ { "message": { "role": "assistant", "content": "{\"a\":1}" } } ]
        });
        assert_eq!(extract_content(&payload).unwrap(), "{\"a\":1}");

        let bad = serde_json::json!({ "choices": [] });
        assert!(matches!(
            extract_content(&bad),
            Err(TransportError::Protocol(_))
        ));
    }
}
