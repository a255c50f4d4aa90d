//! Session files: a single JSON document holding everything needed to
//! resume, including the transcript and per-section resume markers.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AccumulatedPrompt, GenerationSession, PromptEntry, SectionState, SessionError};
use crate::gateway::ChatExchange;
use crate::prompts::{PromptSet, RequestLimits};
use crate::template::TemplateDocument;

pub const SESSION_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct SessionFile {
    schema_version: u64,
    session_id: String,
    template: TemplateDocument,
    prompt_entries: Vec<PromptEntry>,
    sections: Vec<SectionState>,
    cursor: usize,
    completed: bool,
    prompt_versions: PromptSet,
    limits: RequestLimits,
    intervention_cap: u32,
    transcript: Vec<ChatExchange>,
}

pub fn save_session(session: &GenerationSession) -> Vec<u8> {
    let file = SessionFile {
        schema_version: SESSION_SCHEMA_VERSION,
        session_id: session.session_id.clone(),
        template: session.template.clone(),
        prompt_entries: session.accumulated.entries().to_vec(),
        sections: session.sections.clone(),
        cursor: session.cursor,
        completed: session.completed,
        prompt_versions: session.prompts.clone(),
        limits: session.limits,
        intervention_cap: session.intervention_cap,
        transcript: session.transcript.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("session serializes");
    out.push(b'\n');
    out
}

pub fn load_session(bytes: &[u8]) -> Result<GenerationSession, SessionError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| SessionError::Parse(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| SessionError::Parse("missing schema_version".into()))?;
    if found != SESSION_SCHEMA_VERSION {
        return Err(SessionError::Version {
            found,
            expected: SESSION_SCHEMA_VERSION,
        });
    }
    let file: SessionFile =
        serde_json::from_value(value).map_err(|e| SessionError::Parse(e.to_string()))?;

    // re-run template validation so a hand-edited file cannot break ordering
    let template = TemplateDocument::new(file.template.title, file.template.sections)
        .map_err(|e| SessionError::Parse(e.to_string()))?;
    let accumulated =
        AccumulatedPrompt::from_entries(file.prompt_entries).map_err(SessionError::Parse)?;

    let session = GenerationSession {
        session_id: file.session_id,
        template,
        accumulated,
        sections: file.sections,
        cursor: file.cursor,
        completed: file.completed,
        prompts: file.prompt_versions,
        limits: file.limits,
        intervention_cap: file.intervention_cap,
        transcript: file.transcript,
    };
    session.validate().map_err(SessionError::Parse)?;
    Ok(session)
}
