use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{user_digest, ExchangeMode, Gateway, GatewayError};
use crate::prompts::{AgentRole, ChatRequest};

const DIGEST_PREFIX: &str = "sha256:";

/// One canned reply. `user_match` is either the exact user text or
/// `sha256:<hex>` of it. `system_contains` (a string or a list of strings)
/// narrows the fixture to requests whose system text contains every needle,
/// so one user text can have different replies per prompt version or before
/// and after the accumulated prompt grows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub role: AgentRole,
    pub user_match: String,
    #[serde(
        default,
        skip_serializing_if = "Vec::is_empty",
        deserialize_with = "one_or_many"
    )]
    pub system_contains: Vec<String>,
    pub reply: String,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => Vec::new(),
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
    })
}

impl Fixture {
    pub fn new(role: AgentRole, user: impl Into<String>, reply: impl Into<String>) -> Self {
        Fixture {
            role,
            user_match: user.into(),
            system_contains: Vec::new(),
            reply: reply.into(),
        }
    }

    pub fn when_system_contains(mut self, needle: impl Into<String>) -> Self {
        self.system_contains.push(needle.into());
        self
    }

    fn key_digest(&self) -> String {
        match self.user_match.strip_prefix(DIGEST_PREFIX) {
            Some(hex) => hex.to_ascii_lowercase(),
            None => user_digest(&self.user_match),
        }
    }
}

/// Deterministic gateway that answers from a fixture set.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGateway {
    // (role, user digest) -> fixtures in file order
    fixtures: HashMap<(AgentRole, String), Vec<Fixture>>,
    len: usize,
}

impl ScriptedGateway {
    pub fn new(fixtures: impl IntoIterator<Item = Fixture>) -> Result<Self, GatewayError> {
        let mut gw = ScriptedGateway::default();
        let mut keys = HashSet::new();
        for f in fixtures {
            if f.reply.trim().is_empty() {
                return Err(GatewayError::Fixture(format!(
                    "empty reply for {} / {:?}",
                    f.role, f.user_match
                )));
            }
            let digest = f.key_digest();
            let mut needles = f.system_contains.clone();
            needles.sort();
            if !keys.insert((f.role, digest.clone(), needles)) {
                return Err(GatewayError::Fixture(format!(
                    "duplicate fixture key for {} / {:?} / {:?}",
                    f.role, f.user_match, f.system_contains
                )));
            }
            gw.fixtures.entry((f.role, digest)).or_default().push(f);
            gw.len += 1;
        }
        Ok(gw)
    }

    /// Parses a fixture file: a JSON array of `{role, user_match, reply}`
    /// objects with optional `system_contains`.
    pub fn from_json(bytes: &[u8]) -> Result<Self, GatewayError> {
        let fixtures: Vec<Fixture> =
            serde_json::from_slice(bytes).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        Self::new(fixtures)
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path)
            .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Among fixtures whose needles all occur in the system text, the most
    /// specific wins: most needles, then longest total needle length, then
    /// file order. A fixture without needles matches any system text.
    pub fn lookup(&self, role: AgentRole, request: &ChatRequest) -> Option<&Fixture> {
        let specificity = |f: &Fixture| {
            (
                f.system_contains.len(),
                f.system_contains.iter().map(String::len).sum::<usize>(),
            )
        };
        self.fixtures
            .get(&(role, user_digest(&request.user)))?
            .iter()
            .filter(|f| {
                f.system_contains
                    .iter()
                    .all(|n| request.system.contains(n.as_str()))
            })
            .fold(None::<&Fixture>, |best, f| match best {
                Some(b) if specificity(b) >= specificity(f) => Some(b),
                _ => Some(f),
            })
    }
}

impl Gateway for ScriptedGateway {
    fn mode(&self) -> ExchangeMode {
        ExchangeMode::Scripted
    }

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        self.lookup(role, request)
            .map(|f| f.reply.clone())
            .ok_or_else(|| GatewayError::FixtureMiss {
                role,
                digest: user_digest(&request.user),
                preview: request.user.chars().take(60).collect(),
            })
    }
}
