use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{ExchangeMode, Gateway, GatewayConfig, GatewayError};
use crate::prompts::{AgentRole, ChatRequest};

/// Blocking client for chat-completion endpoints that take a `messages`
/// array and answer with `choices[0].message.content`.
///
/// Must not be constructed or dropped on an async executor thread; the
/// service runs it on the blocking pool.
pub struct LiveGateway {
    config: GatewayConfig,
    client: Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    content: Option<String>,
}

impl LiveGateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(LiveGateway { config, client })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn send_once(
        &self,
        body: &WireRequest<'_>,
    ) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let mut req = self.client.post(&self.config.endpoint_url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        req.send()
    }
}

impl Gateway for LiveGateway {
    fn mode(&self) -> ExchangeMode {
        ExchangeMode::Live
    }

    fn complete(&self, _role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = WireRequest {
            model: &self.config.model_name,
            messages: [
                WireMessage {
                    role: "system",
                    content: &request.system,
                },
                WireMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };

        let attempts = self.config.retry_limit + 1;
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.send_once(&body) {
                Ok(resp) => break resp,
                Err(e) if attempt < attempts => {
                    tracing::warn!(attempt, error = %e, "chat completion transport error, retrying");
                    thread::sleep(Duration::from_millis(100 << (attempt - 1)));
                }
                Err(e) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            }
        };

        let status = response.status();
        let text = response.text().map_err(|e| GatewayError::Transport {
            attempts: attempt,
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Protocol("no message content in first choice".into()))?;
        if content.trim().is_empty() {
            return Err(GatewayError::Protocol("empty message content".into()));
        }
        Ok(content)
    }
}
