use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{user_digest, ChatExchange, ExchangeMode, Gateway, GatewayError};
use crate::prompts::{AgentRole, ChatRequest};

/// Answers requests from a recorded transcript. A request must match a
/// recorded one exactly (role, system and user text); when the same request
/// was recorded more than once the first reply is used.
#[derive(Debug, Clone, Default)]
pub struct ReplayGateway {
    replies: HashMap<(AgentRole, [u8; 32]), String>,
}

fn request_key(role: AgentRole, request: &ChatRequest) -> (AgentRole, [u8; 32]) {
    let mut h = Sha256::new();
    h.update(request.system.as_bytes());
    h.update([0u8]);
    h.update(request.user.as_bytes());
    (role, h.finalize().into())
}

impl ReplayGateway {
    pub fn new<'a>(exchanges: impl IntoIterator<Item = &'a ChatExchange>) -> Self {
        let mut replies = HashMap::new();
        for ex in exchanges {
            replies
                .entry(request_key(ex.role, &ex.request))
                .or_insert_with(|| ex.reply.clone());
        }
        ReplayGateway { replies }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Gateway for ReplayGateway {
    fn mode(&self) -> ExchangeMode {
        ExchangeMode::Replay
    }

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        self.replies
            .get(&request_key(role, request))
            .cloned()
            .ok_or_else(|| GatewayError::FixtureMiss {
                role,
                digest: user_digest(&request.user),
                preview: request.user.chars().take(60).collect(),
            })
    }
}
