//! Every model call goes through a [`Gateway`]. Three implementations exist:
//! a live chat-completion HTTP client, a scripted stub driven by fixture
//! files, and a replayer built from a recorded transcript.

mod live;
mod replay;
mod scripted;
mod transcript;

use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::{
    AgentRole, ChatRequest, RequestLimits, DEFAULT_CONTEXT_LIMIT, DEFAULT_MAX_OUTPUT_TOKENS,
};

pub use live::LiveGateway;
pub use replay::ReplayGateway;
pub use scripted::{Fixture, ScriptedGateway};
pub use transcript::{
    load_transcript, record_transcript, Transcript, TranscriptError, TRANSCRIPT_FORMAT,
};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";
pub const MAX_RETRY_LIMIT: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no fixture for role {role} and user text sha256:{digest} ({preview:?})")]
    FixtureMiss {
        role: AgentRole,
        digest: String,
        preview: String,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("invalid fixture set: {0}")]
    Fixture(String),
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    Live,
    Replay,
    Scripted,
}

impl fmt::Display for ExchangeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExchangeMode::Live => "live",
            ExchangeMode::Replay => "replay",
            ExchangeMode::Scripted => "scripted",
        })
    }
}

/// One request/response pair, as stored in transcripts and session files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: AgentRole,
    #[serde(flatten)]
    pub request: ChatRequest,
    pub reply: String,
    pub mode: ExchangeMode,
    pub timestamp: DateTime<Utc>,
}

pub trait Gateway: Send + Sync {
    fn mode(&self) -> ExchangeMode;

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<G: Gateway + ?Sized> Gateway for &G {
    fn mode(&self) -> ExchangeMode {
        (**self).mode()
    }

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(role, request)
    }
}

impl<G: Gateway + ?Sized> Gateway for std::sync::Arc<G> {
    fn mode(&self) -> ExchangeMode {
        (**self).mode()
    }

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(role, request)
    }
}

/// Calls the gateway and appends the exchange to `transcript` on success.
pub fn complete_recorded(
    gateway: &dyn Gateway,
    role: AgentRole,
    request: &ChatRequest,
    transcript: &mut Vec<ChatExchange>,
) -> Result<String, GatewayError> {
    let reply = gateway.complete(role, request)?;
    transcript.push(ChatExchange {
        role,
        request: request.clone(),
        reply: reply.clone(),
        mode: gateway.mode(),
        timestamp: Utc::now(),
    });
    Ok(reply)
}

/// Hex SHA-256 of a user prompt; fixture keys and miss errors use it.
pub fn user_digest(user: &str) -> String {
    hex::encode(Sha256::digest(user.as_bytes()))
}

/// API key wrapper that never prints or serializes its value.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub context_limit: usize,
    pub max_output_tokens: usize,
    pub temperature: f64,
    pub timeout: Duration,
    pub retry_limit: u32,
    pub api_key: Option<ApiKey>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: DEFAULT_MODEL.to_string(),
            context_limit: DEFAULT_CONTEXT_LIMIT,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            retry_limit: 2,
            api_key: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.context_limit == 0 || self.max_output_tokens == 0 {
            return Err(GatewayError::Config("token limits must be positive".into()));
        }
        if self.max_output_tokens >= self.context_limit {
            return Err(GatewayError::Config(format!(
                "max_output_tokens ({}) must be below context_limit ({})",
                self.max_output_tokens, self.context_limit
            )));
        }
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(GatewayError::Config(format!(
                "retry_limit {} exceeds {MAX_RETRY_LIMIT}",
                self.retry_limit
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config("temperature must be in [0, 2]".into()));
        }
        Ok(())
    }

    pub fn limits(&self) -> RequestLimits {
        RequestLimits {
            context_limit: self.context_limit,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        }
    }
}
