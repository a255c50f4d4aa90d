//! Versioned system prompts for the three agents, request composition, and
//! reply parsing.
//!
//! Every agent request is a system prompt (the role description, with the
//! accumulated prompt substituted where the role needs it) plus a
//! context-specific user prompt. Replies are parsed into typed outcomes; the
//! retrieval agent signals "nothing missing" with the [`ALL_INFO`] sentinel.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{render_accumulated, AccumulatedPrompt};
use crate::template::{SectionKind, TemplateSection};

/// Sentinel the retrieval agent emits when everything it needs is present.
pub const ALL_INFO: &str = "[ALL_INFO]";

/// Tokens that must never reach the output document.
pub const SENTINEL_TOKENS: &[&str] = &[ALL_INFO];

/// Where the rendered accumulated prompt goes inside a system prompt.
pub const ACCUMULATED_SLOT: &str = "<Accumulated prompt>";

/// Answer scaffold the refined retrieval prompt asks for.
const MISSING_SCAFFOLD: &str = "the missing information to satisfy the request";

pub const DEFAULT_CONTEXT_LIMIT: usize = 16_385;
pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 4_096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("section {section_id:?} is a {kind} section; only text sections are generated")]
    Kind { section_id: String, kind: String },
    #[error("the {role} agent returned an empty reply")]
    EmptyReply { role: AgentRole },
    #[error("request needs ~{required} tokens but the context limit is {limit}")]
    Budget { required: usize, limit: usize },
    #[error("prompt version {version} is for the {actual} role, expected {expected}")]
    RoleMismatch {
        version: PromptVersionId,
        expected: AgentRole,
        actual: AgentRole,
    },
    #[error("no {version} prompt exists for the {role} role")]
    UnknownVersion {
        role: AgentRole,
        version: PromptVersionId,
    },
    #[error("prompt resource {path}: {message}")]
    Resource { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    #[serde(alias = "SemanticsIdentification")]
    SemanticsIdentification,
    #[serde(alias = "InformationRetrieval")]
    InformationRetrieval,
    #[serde(alias = "ContentGeneration")]
    ContentGeneration,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [
        AgentRole::SemanticsIdentification,
        AgentRole::InformationRetrieval,
        AgentRole::ContentGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::SemanticsIdentification => "semantics_identification",
            AgentRole::InformationRetrieval => "information_retrieval",
            AgentRole::ContentGeneration => "content_generation",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown agent role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVersionId {
    Baseline,
    V2ActionOnly,
    V3FewShot,
}

impl PromptVersionId {
    pub const ALL: [PromptVersionId; 3] = [
        PromptVersionId::Baseline,
        PromptVersionId::V2ActionOnly,
        PromptVersionId::V3FewShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVersionId::Baseline => "baseline",
            PromptVersionId::V2ActionOnly => "v2_action_only",
            PromptVersionId::V3FewShot => "v3_few_shot",
        }
    }
}

impl fmt::Display for PromptVersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVersionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVersionId::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown prompt version {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub role: AgentRole,
    pub version: PromptVersionId,
    pub system_text: String,
}

const BUILTIN_PROMPTS: &[(AgentRole, PromptVersionId, &str)] = &[
    (
        AgentRole::SemanticsIdentification,
        PromptVersionId::Baseline,
        include_str!("../prompts/semantics_identification.baseline.txt"),
    ),
    (
        AgentRole::SemanticsIdentification,
        PromptVersionId::V2ActionOnly,
        include_str!("../prompts/semantics_identification.v2_action_only.txt"),
    ),
    (
        AgentRole::SemanticsIdentification,
        PromptVersionId::V3FewShot,
        include_str!("../prompts/semantics_identification.v3_few_shot.txt"),
    ),
    (
        AgentRole::InformationRetrieval,
        PromptVersionId::Baseline,
        include_str!("../prompts/information_retrieval.baseline.txt"),
    ),
    (
        AgentRole::InformationRetrieval,
        PromptVersionId::V3FewShot,
        include_str!("../prompts/information_retrieval.v3_few_shot.txt"),
    ),
    (
        AgentRole::ContentGeneration,
        PromptVersionId::Baseline,
        include_str!("../prompts/content_generation.baseline.txt"),
    ),
    (
        AgentRole::ContentGeneration,
        PromptVersionId::V3FewShot,
        include_str!("../prompts/content_generation.v3_few_shot.txt"),
    ),
];

/// All known system prompts, keyed by role and version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    prompts: BTreeMap<(AgentRole, PromptVersionId), PromptVersion>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    /// The prompts compiled into the binary from `prompts/`.
    pub fn builtin() -> Self {
        let prompts = BUILTIN_PROMPTS
            .iter()
            .map(|(role, version, text)| {
                (
                    (*role, *version),
                    PromptVersion {
                        role: *role,
                        version: *version,
                        system_text: (*text).to_string(),
                    },
                )
            })
            .collect();
        PromptLibrary { prompts }
    }

    /// Loads `<role>.<version>.txt` files from `dir` on top of the builtin
    /// set. Files are taken byte-for-byte; other file names are ignored.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::builtin();
        let read_dir = std::fs::read_dir(dir).map_err(|e| PromptError::Resource {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for entry in read_dir {
            let entry = entry.map_err(|e| PromptError::Resource {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = name.strip_suffix(".txt") else {
                continue;
            };
            let Some((role, version)) = stem.split_once('.') else {
                continue;
            };
            let (Ok(role), Ok(version)) = (
                role.parse::<AgentRole>(),
                version.parse::<PromptVersionId>(),
            ) else {
                continue;
            };
            let system_text =
                std::fs::read_to_string(&path).map_err(|e| PromptError::Resource {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            lib.prompts.insert(
                (role, version),
                PromptVersion {
                    role,
                    version,
                    system_text,
                },
            );
        }
        Ok(lib)
    }

    pub fn get(
        &self,
        role: AgentRole,
        version: PromptVersionId,
    ) -> Result<&PromptVersion, PromptError> {
        self.prompts
            .get(&(role, version))
            .ok_or(PromptError::UnknownVersion { role, version })
    }

    /// The most refined version available for `role`.
    pub fn default_for(&self, role: AgentRole) -> &PromptVersion {
        self.prompts
            .range((role, PromptVersionId::Baseline)..=(role, PromptVersionId::V3FewShot))
            .next_back()
            .map(|(_, v)| v)
            .expect("every role has at least a baseline prompt")
    }

    pub fn versions(&self, role: AgentRole) -> Vec<PromptVersionId> {
        self.prompts
            .keys()
            .filter(|(r, _)| *r == role)
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn default_set(&self) -> PromptSet {
        PromptSet {
            semantics: self.default_for(AgentRole::SemanticsIdentification).clone(),
            retrieval: self.default_for(AgentRole::InformationRetrieval).clone(),
            generation: self.default_for(AgentRole::ContentGeneration).clone(),
        }
    }

    /// A set built from explicit versions, one per role.
    pub fn select(
        &self,
        semantics: PromptVersionId,
        retrieval: PromptVersionId,
        generation: PromptVersionId,
    ) -> Result<PromptSet, PromptError> {
        Ok(PromptSet {
            semantics: self
                .get(AgentRole::SemanticsIdentification, semantics)?
                .clone(),
            retrieval: self
                .get(AgentRole::InformationRetrieval, retrieval)?
                .clone(),
            generation: self.get(AgentRole::ContentGeneration, generation)?.clone(),
        })
    }
}

/// The prompt version used for each role in one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub semantics: PromptVersion,
    pub retrieval: PromptVersion,
    pub generation: PromptVersion,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptLibrary::builtin().default_set()
    }
}

impl PromptSet {
    pub fn for_role(&self, role: AgentRole) -> &PromptVersion {
        match role {
            AgentRole::SemanticsIdentification => &self.semantics,
            AgentRole::InformationRetrieval => &self.retrieval,
            AgentRole::ContentGeneration => &self.generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticsDirectives {
    pub instructions: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RetrievalOutcome {
    AllInfo,
    Missing { description: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user) + self.max_output_tokens
    }
}

/// Token budget and sampling settings applied to every composed request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestLimits {
    pub context_limit: usize,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl Default for RequestLimits {
    fn default() -> Self {
        RequestLimits {
            context_limit: DEFAULT_CONTEXT_LIMIT,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
        }
    }
}

impl RequestLimits {
    fn build(&self, system: String, user: String) -> Result<ChatRequest, PromptError> {
        let request = ChatRequest {
            system,
            user,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        };
        let required = request.estimated_tokens();
        if required > self.context_limit {
            return Err(PromptError::Budget {
                required,
                limit: self.context_limit,
            });
        }
        Ok(request)
    }
}

/// Rough token count: one token per four Unicode scalar values, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn expect_role(version: &PromptVersion, expected: AgentRole) -> Result<(), PromptError> {
    if version.role != expected {
        return Err(PromptError::RoleMismatch {
            version: version.version,
            expected,
            actual: version.role,
        });
    }
    Ok(())
}

fn substitute_accumulated(system_text: &str, accumulated: &AccumulatedPrompt) -> String {
    system_text.replace(ACCUMULATED_SLOT, &render_accumulated(accumulated))
}

pub fn compose_semantics_prompt(
    section: &TemplateSection,
    version: &PromptVersion,
    limits: &RequestLimits,
) -> Result<ChatRequest, PromptError> {
    expect_role(version, AgentRole::SemanticsIdentification)?;
    if section.kind != SectionKind::Text {
        return Err(PromptError::Kind {
            section_id: section.id.clone(),
            kind: section.kind.as_str().to_string(),
        });
    }
    limits.build(version.system_text.clone(), section.content.clone())
}

pub fn parse_semantics_response(reply: &str) -> Result<SemanticsDirectives, PromptError> {
    let instructions = reply.trim();
    if instructions.is_empty() {
        return Err(PromptError::EmptyReply {
            role: AgentRole::SemanticsIdentification,
        });
    }
    Ok(SemanticsDirectives {
        instructions: instructions.to_string(),
        raw: reply.to_string(),
    })
}

/// The section-specific task handed to the retrieval agent.
pub fn retrieval_task(directives: &SemanticsDirectives) -> String {
    format!(
        "I want you to satisfy this instruction\n{}\nWhat is the missing information?",
        directives.instructions
    )
}

pub fn compose_retrieval_prompt(
    accumulated: &AccumulatedPrompt,
    directives: &SemanticsDirectives,
    version: &PromptVersion,
    limits: &RequestLimits,
) -> Result<ChatRequest, PromptError> {
    expect_role(version, AgentRole::InformationRetrieval)?;
    limits.build(
        substitute_accumulated(&version.system_text, accumulated),
        retrieval_task(directives),
    )
}

pub fn parse_retrieval_response(reply: &str) -> Result<RetrievalOutcome, PromptError> {
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        return Err(PromptError::EmptyReply {
            role: AgentRole::InformationRetrieval,
        });
    }
    if reply.contains(ALL_INFO) {
        let without_token = trimmed.replace(ALL_INFO, "");
        if !strip_scaffold(&without_token).is_empty() {
            tracing::warn!(
                reply,
                "retrieval reply carries {ALL_INFO} next to other text; treating as all info"
            );
        }
        return Ok(RetrievalOutcome::AllInfo);
    }
    let description = match strip_scaffold(trimmed) {
        "" => strip_period(trimmed),
        d => d,
    };
    Ok(RetrievalOutcome::Missing {
        description: description.to_string(),
    })
}

fn strip_period(s: &str) -> &str {
    let s = s.trim();
    s.strip_suffix('.').map_or(s, str::trim_end)
}

// Drops "the missing information to satisfy the request is|are" when the
// reply starts with it, then trims and removes one trailing period.
fn strip_scaffold(reply: &str) -> &str {
    let reply = reply.trim();
    let head_len = MISSING_SCAFFOLD.len();
    let rest = match reply.get(..head_len) {
        Some(head) if head.eq_ignore_ascii_case(MISSING_SCAFFOLD) => {
            let after = reply[head_len..].trim_start();
            ["is", "are"]
                .iter()
                .find_map(|verb| {
                    let candidate = after.get(..verb.len())?;
                    if !candidate.eq_ignore_ascii_case(verb) {
                        return None;
                    }
                    let tail = &after[verb.len()..];
                    let boundary = tail
                        .chars()
                        .next()
                        .is_none_or(|c| c.is_whitespace() || c == ':' || c == '.');
                    boundary.then_some(tail)
                })
                .unwrap_or(reply)
        }
        _ => reply,
    };
    let rest = rest.trim_start_matches(':');
    strip_period(rest)
}

pub fn compose_generation_prompt(
    accumulated: &AccumulatedPrompt,
    directives: &SemanticsDirectives,
    version: &PromptVersion,
    limits: &RequestLimits,
) -> Result<ChatRequest, PromptError> {
    expect_role(version, AgentRole::ContentGeneration)?;
    limits.build(
        substitute_accumulated(&version.system_text, accumulated),
        directives.instructions.clone(),
    )
}

/// Removes sentinel tokens and surrounding whitespace from generated text.
pub fn postprocess_generated(reply: &str) -> String {
    let mut text = reply.to_string();
    for token in SENTINEL_TOKENS {
        text = text.replace(token, "");
    }
    text.trim().to_string()
}
