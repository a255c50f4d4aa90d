//! Per-document generation state machine.
//!
//! A session walks the template sections in reading order. For each text
//! section it runs three agent calls: semantics identification, information
//! retrieval and content generation. When retrieval reports missing data the
//! session pauses until the user answers (or declines, or skips the
//! section). Answers go into the append-only accumulated prompt, which is
//! the only data source the later agents see.

mod accumulated;
mod file;
mod output;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{complete_recorded, ChatExchange, Gateway, GatewayError};
use crate::prompts::{
    compose_generation_prompt, compose_retrieval_prompt, compose_semantics_prompt,
    parse_retrieval_response, parse_semantics_response, postprocess_generated, AgentRole,
    PromptError, PromptSet, RequestLimits, RetrievalOutcome, SemanticsDirectives,
};
use crate::template::TemplateDocument;

pub use accumulated::{render_accumulated, AccumulatedPrompt, PromptEntry, Provenance};
pub use file::{load_session, save_session, SESSION_SCHEMA_VERSION};
pub use output::{OutputDocument, OutputSlot, SlotOrigin};

pub const DEFAULT_INTERVENTION_CAP: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session already completed")]
    SessionDone,
    #[error("invalid state: {0}")]
    State(String),
    #[error("sections not resolved: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("malformed session file: {0}")]
    Parse(String),
    #[error("unsupported session schema version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionStatus {
    Pending,
    AwaitingIntervention,
    Generated,
    Skipped,
    Carried,
}

impl SectionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SectionStatus::Generated | SectionStatus::Skipped | SectionStatus::Carried
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionStatus::Pending => "pending",
            SectionStatus::AwaitingIntervention => "awaiting_intervention",
            SectionStatus::Generated => "generated",
            SectionStatus::Skipped => "skipped",
            SectionStatus::Carried => "carried",
        }
    }
}

/// Next agent call for a pending section. Stored so a session resumes at the
/// phase that failed or was interrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Semantics,
    Retrieval,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionState {
    pub section_id: String,
    pub status: SectionStatus,
    pub directives: Option<SemanticsDirectives>,
    pub missing: Option<String>,
    pub output_text: Option<String>,
    pub next_phase: Phase,
    /// Interventions answered with non-empty text for this section.
    pub interventions: u32,
}

impl SectionState {
    fn new(section_id: String) -> Self {
        SectionState {
            section_id,
            status: SectionStatus::Pending,
            directives: None,
            missing: None,
            output_text: None,
            next_phase: Phase::Semantics,
            interventions: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepEvent {
    SectionGenerated { section_id: String, text: String },
    InterventionRequired { section_id: String, missing: String },
    SectionCarried { section_id: String },
    Completed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    pub session_id: Option<String>,
    pub prompts: PromptSet,
    pub limits: RequestLimits,
    pub intervention_cap: u32,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            session_id: None,
            prompts: PromptSet::default(),
            limits: RequestLimits::default(),
            intervention_cap: DEFAULT_INTERVENTION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSession {
    pub(crate) session_id: String,
    pub(crate) template: TemplateDocument,
    pub(crate) accumulated: AccumulatedPrompt,
    pub(crate) sections: Vec<SectionState>,
    pub(crate) cursor: usize,
    pub(crate) completed: bool,
    pub(crate) prompts: PromptSet,
    pub(crate) limits: RequestLimits,
    pub(crate) intervention_cap: u32,
    pub(crate) transcript: Vec<ChatExchange>,
}

/// Starts a session with default prompts, limits and a random id.
pub fn start_session(template: TemplateDocument, initial_prompt: &str) -> GenerationSession {
    GenerationSession::start(template, initial_prompt, SessionOptions::default())
}

impl GenerationSession {
    pub fn start(
        template: TemplateDocument,
        initial_prompt: &str,
        options: SessionOptions,
    ) -> Self {
        let mut accumulated = AccumulatedPrompt::new();
        if !initial_prompt.trim().is_empty() {
            accumulated.append(initial_prompt, Provenance::Initial, None);
        }
        let sections = template
            .sections
            .iter()
            .map(|s| SectionState::new(s.id.clone()))
            .collect();
        GenerationSession {
            session_id: options
                .session_id
                .unwrap_or_else(|| uuid::Uuid::new_v4().to_string()),
            template,
            accumulated,
            sections,
            cursor: 0,
            completed: false,
            prompts: options.prompts,
            limits: options.limits,
            intervention_cap: options.intervention_cap,
            transcript: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn template(&self) -> &TemplateDocument {
        &self.template
    }

    pub fn accumulated(&self) -> &AccumulatedPrompt {
        &self.accumulated
    }

    pub fn render_accumulated(&self) -> String {
        render_accumulated(&self.accumulated)
    }

    pub fn sections(&self) -> &[SectionState] {
        &self.sections
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn limits(&self) -> &RequestLimits {
        &self.limits
    }

    pub fn intervention_cap(&self) -> u32 {
        self.intervention_cap
    }

    pub fn transcript(&self) -> &[ChatExchange] {
        &self.transcript
    }

    /// True once `step` has returned `Completed`.
    pub fn is_completed(&self) -> bool {
        self.completed
    }

    /// True when every section has reached a terminal status.
    pub fn is_resolved(&self) -> bool {
        self.sections.iter().all(|s| s.status.is_terminal())
    }

    pub fn current(&self) -> Option<&SectionState> {
        self.sections.get(self.cursor)
    }

    /// The section waiting for user input and the missing-data description.
    pub fn pending_intervention(&self) -> Option<(&str, &str)> {
        self.current()
            .filter(|s| s.status == SectionStatus::AwaitingIntervention)
            .map(|s| {
                (
                    s.section_id.as_str(),
                    s.missing.as_deref().unwrap_or_default(),
                )
            })
    }

    fn advance_cursor(&mut self) {
        self.cursor = self
            .sections
            .iter()
            .position(|s| !s.status.is_terminal())
            .unwrap_or(self.sections.len());
    }

    fn current_mut(&mut self, action: &str) -> Result<&mut SectionState, SessionError> {
        let cursor = self.cursor;
        self.sections
            .get_mut(cursor)
            .ok_or_else(|| SessionError::State(format!("no current section to {action}")))
    }

    /// Runs the current section until it is generated, carried or needs
    /// user input. Returns `Completed` once, after the last section.
    pub fn step(&mut self, gateway: &dyn Gateway) -> Result<StepEvent, SessionError> {
        if self.completed {
            return Err(SessionError::SessionDone);
        }
        if self.cursor >= self.sections.len() {
            self.completed = true;
            return Ok(StepEvent::Completed);
        }

        let idx = self.cursor;
        let section = self.template.sections[idx].clone();
        if self.sections[idx].status == SectionStatus::AwaitingIntervention {
            return Err(SessionError::State(format!(
                "section {} is awaiting intervention",
                section.id
            )));
        }

        if !section.is_text() {
            self.sections[idx].status = SectionStatus::Carried;
            self.advance_cursor();
            return Ok(StepEvent::SectionCarried {
                section_id: section.id,
            });
        }

        loop {
            match self.sections[idx].next_phase {
                Phase::Semantics => {
                    let request =
                        compose_semantics_prompt(&section, &self.prompts.semantics, &self.limits)?;
                    let reply = complete_recorded(
                        gateway,
                        AgentRole::SemanticsIdentification,
                        &request,
                        &mut self.transcript,
                    )?;
                    let state = &mut self.sections[idx];
                    state.directives = Some(parse_semantics_response(&reply)?);
                    state.next_phase = Phase::Retrieval;
                }
                Phase::Retrieval => {
                    let directives = self.cached_directives(idx)?;
                    let request = compose_retrieval_prompt(
                        &self.accumulated,
                        &directives,
                        &self.prompts.retrieval,
                        &self.limits,
                    )?;
                    let reply = complete_recorded(
                        gateway,
                        AgentRole::InformationRetrieval,
                        &request,
                        &mut self.transcript,
                    )?;
                    let outcome = parse_retrieval_response(&reply)?;
                    let cap = self.intervention_cap;
                    let state = &mut self.sections[idx];
                    match outcome {
                        RetrievalOutcome::AllInfo => state.next_phase = Phase::Generation,
                        RetrievalOutcome::Missing { description } if state.interventions >= cap => {
                            tracing::warn!(
                                section = %state.section_id,
                                missing = %description,
                                "intervention cap reached, generating without the missing data"
                            );
                            state.next_phase = Phase::Generation;
                        }
                        RetrievalOutcome::Missing { description } => {
                            state.status = SectionStatus::AwaitingIntervention;
                            state.missing = Some(description.clone());
                            return Ok(StepEvent::InterventionRequired {
                                section_id: section.id,
                                missing: description,
                            });
                        }
                    }
                }
                Phase::Generation => {
                    let directives = self.cached_directives(idx)?;
                    let request = compose_generation_prompt(
                        &self.accumulated,
                        &directives,
                        &self.prompts.generation,
                        &self.limits,
                    )?;
                    let reply = complete_recorded(
                        gateway,
                        AgentRole::ContentGeneration,
                        &request,
                        &mut self.transcript,
                    )?;
                    let text = postprocess_generated(&reply);
                    if text.is_empty() {
                        tracing::warn!(section = %section.id, "generated text is empty after post-processing");
                    }
                    let state = &mut self.sections[idx];
                    state.output_text = Some(text.clone());
                    state.status = SectionStatus::Generated;
                    self.advance_cursor();
                    return Ok(StepEvent::SectionGenerated {
                        section_id: section.id,
                        text,
                    });
                }
            }
        }
    }

    fn cached_directives(&mut self, idx: usize) -> Result<SemanticsDirectives, SessionError> {
        match &self.sections[idx].directives {
            Some(d) => Ok(d.clone()),
            None => {
                // resume marker without directives: redo semantics first
                self.sections[idx].next_phase = Phase::Semantics;
                Err(SessionError::State(format!(
                    "section {} has no cached directives",
                    self.sections[idx].section_id
                )))
            }
        }
    }

    /// Answers the pending intervention. Non-empty text is appended to the
    /// accumulated prompt and retrieval runs again on the next step; empty
    /// text declines and the next step goes straight to generation.
    pub fn provide_intervention(&mut self, text: &str) -> Result<(), SessionError> {
        let completed = self.completed;
        let state = self.current_mut("answer")?;
        if completed || state.status != SectionStatus::AwaitingIntervention {
            return Err(SessionError::State(format!(
                "section {} is not awaiting intervention",
                state.section_id
            )));
        }
        let section_id = state.section_id.clone();
        state.status = SectionStatus::Pending;
        state.missing = None;
        if text.trim().is_empty() {
            state.next_phase = Phase::Generation;
        } else {
            state.next_phase = Phase::Retrieval;
            state.interventions += 1;
            self.accumulated
                .append(text, Provenance::Intervention, Some(section_id));
        }
        Ok(())
    }

    /// Resolves the current section without generating it. The accumulated
    /// prompt is left untouched.
    pub fn skip_section(&mut self) -> Result<String, SessionError> {
        let state = self.current_mut("skip")?;
        if state.status.is_terminal() {
            return Err(SessionError::State(format!(
                "section {} is already resolved",
                state.section_id
            )));
        }
        state.status = SectionStatus::Skipped;
        state.missing = None;
        let id = state.section_id.clone();
        self.advance_cursor();
        Ok(id)
    }

    /// Builds the output document. Every section must be resolved.
    pub fn assemble_document(&self) -> Result<OutputDocument, SessionError> {
        let unresolved: Vec<String> = self
            .sections
            .iter()
            .filter(|s| !s.status.is_terminal())
            .map(|s| s.section_id.clone())
            .collect();
        if !unresolved.is_empty() {
            return Err(SessionError::Incomplete(unresolved));
        }
        let slots = self
            .template
            .sections
            .iter()
            .zip(&self.sections)
            .filter_map(|(tpl, state)| match state.status {
                SectionStatus::Generated => Some(OutputSlot {
                    section_id: tpl.id.clone(),
                    origin: SlotOrigin::Generated,
                    text: state.output_text.clone().unwrap_or_default(),
                }),
                SectionStatus::Carried => Some(OutputSlot {
                    section_id: tpl.id.clone(),
                    origin: SlotOrigin::Carried,
                    text: tpl.content.clone(),
                }),
                _ => None,
            })
            .collect();
        Ok(OutputDocument {
            title: self.template.title.clone(),
            slots,
        })
    }

    /// Checks the structural invariants. Used after loading a session file.
    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.sections.len() != self.template.sections.len() {
            return Err("section states do not match the template".into());
        }
        for (tpl, state) in self.template.sections.iter().zip(&self.sections) {
            if tpl.id != state.section_id {
                return Err(format!(
                    "section state {} is out of order",
                    state.section_id
                ));
            }
            match state.status {
                SectionStatus::Generated if state.output_text.is_none() => {
                    return Err(format!("generated section {} has no text", tpl.id))
                }
                SectionStatus::Pending | SectionStatus::Skipped if state.output_text.is_some() => {
                    return Err(format!("section {} has unexpected output", tpl.id))
                }
                SectionStatus::AwaitingIntervention if state.missing.is_none() => {
                    return Err(format!(
                        "section {} awaits input but names nothing missing",
                        tpl.id
                    ))
                }
                SectionStatus::Carried if tpl.is_text() => {
                    return Err(format!("text section {} cannot be carried", tpl.id))
                }
                _ => {}
            }
        }
        let expected = self
            .sections
            .iter()
            .position(|s| !s.status.is_terminal())
            .unwrap_or(self.sections.len());
        if self.cursor != expected {
            return Err(format!("cursor {} should be {expected}", self.cursor));
        }
        if self.completed && expected != self.sections.len() {
            return Err("completed session has unresolved sections".into());
        }
        Ok(())
    }
}
