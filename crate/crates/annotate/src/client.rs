//! Chat-completion requests over HTTP, with retries.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AnnotateError, Result};
use crate::prompt::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL; requests go to `<base_url>/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Extra attempts after a failed request.
    pub retries: u32,
    pub max_in_flight: usize,
    /// Texts longer than this many characters are cut before prompting.
    pub char_budget: Option<usize>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "gemma-2-9b-it".into(),
            timeout_secs: 60.0,
            max_tokens: 50,
            temperature: 1.0,
            retries: 2,
            max_in_flight: 4,
            char_budget: Some(4000),
            api_key: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(AnnotateError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(AnnotateError::Config("max_in_flight must be >= 1".into()));
        }
        if self.char_budget == Some(0) {
            return Err(AnnotateError::Config("char_budget must be >= 1".into()));
        }
        Ok(())
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }
}

/// Wire body of a chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    /// Hex sha256 of the canonical JSON body.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let canonical = tcbm_core::json::canonical_value(&value);
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Anything that turns a request into the assistant's reply text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    retries: u32,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            retries: cfg.retries,
            api_key: cfg.api_key.clone(),
        })
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<String, String> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(request).map_err(|e| e.to_string())?;
        let body: ChatResponse = response.body_mut().read_json().map_err(|e| format!("bad response body: {e}"))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(100 << (attempt - 1).min(6)));
            }
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    warn!("request to {} failed (attempt {}): {e}", self.url, attempt + 1);
                    last = e;
                }
            }
        }
        Err(AnnotateError::Transport {
            id: None,
            attempts: self.retries + 1,
            message: last,
        })
    }
}
