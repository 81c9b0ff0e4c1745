//! OpenAI-compatible chat-completion client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::policy::{ChatMessage, Policy, PolicyContext};
use super::AgentError;

pub const ENV_URL: &str = "AWARE_LLM_URL";
pub const ENV_MODEL: &str = "AWARE_LLM_MODEL";
pub const ENV_KEY: &str = "AWARE_LLM_KEY";
pub const DEFAULT_MAX_TURNS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RemoteChat,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEndpoint {
    pub kind: PolicyKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub temperature: f64,
}

fn default_max_turns() -> usize {
    DEFAULT_MAX_TURNS
}

impl PolicyEndpoint {
    pub fn mock() -> Self {
        PolicyEndpoint {
            kind: PolicyKind::ScriptedMock,
            endpoint_url: None,
            model_name: None,
            max_turns: DEFAULT_MAX_TURNS,
            temperature: 0.0,
        }
    }

    /// Remote endpoint from `AWARE_LLM_URL` and `AWARE_LLM_MODEL`.
    pub fn from_env() -> Result<Self, AgentError> {
        let url = std::env::var(ENV_URL).map_err(|_| AgentError::Config(format!("{ENV_URL} is not set")))?;
        let ep = PolicyEndpoint {
            kind: PolicyKind::RemoteChat,
            endpoint_url: Some(url),
            model_name: std::env::var(ENV_MODEL).ok(),
            ..Self::mock()
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.kind == PolicyKind::RemoteChat && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(AgentError::Config("remote_chat needs an endpoint_url".into()));
        }
        if self.max_turns == 0 {
            return Err(AgentError::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }
}

/// Blocking client with bounded retries on transport errors, 429 and 5xx.
#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    pub temperature: f64,
    pub max_attempts: u32,
    pub backoff: Duration,
}

/// `base` may be the full completions URL or an API root such as
/// `http://host:8000/v1`.
pub fn completions_url(base: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

impl ChatClient {
    pub fn new(endpoint: &PolicyEndpoint) -> Result<Self, AgentError> {
        endpoint.validate()?;
        let url = endpoint
            .endpoint_url
            .as_deref()
            .ok_or_else(|| AgentError::Config("no endpoint_url".into()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(ChatClient {
            http,
            url: completions_url(url),
            model: endpoint.model_name.clone().unwrap_or_else(|| "default".into()),
            api_key: std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty()),
            temperature: endpoint.temperature,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        })
    }

    /// Sends the conversation and returns the assistant's content.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let body = self.request_body(messages);
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.http.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                log::warn!("chat request attempt {} got {status}", attempt + 1);
                last = format!("HTTP {status}");
                continue;
            }
            let text = resp.text().map_err(|e| AgentError::MalformedResponse(e.to_string()))?;
            if !status.is_success() {
                return Err(AgentError::Rejected {
                    status: status.as_u16(),
                    body: text,
                });
            }
            return extract_content(&text);
        }
        Err(AgentError::PolicyUnreachable(format!(
            "{} after {} attempts: {last}",
            self.url, self.max_attempts
        )))
    }
}

fn extract_content(body: &str) -> Result<String, AgentError> {
    let v: Value = serde_json::from_str(body).map_err(|e| AgentError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AgentError::MalformedResponse("no choices[0].message.content".into()))
}

/// A policy served over HTTP.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    pub client: ChatClient,
}

impl Policy for RemotePolicy {
    fn name(&self) -> String {
        format!("remote:{}", self.client.model)
    }

    fn respond(&mut self, ctx: &PolicyContext<'_>) -> Result<String, AgentError> {
        self.client.complete(ctx.messages)
    }
}
