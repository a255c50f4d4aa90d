//! Template-driven document generation with three cooperating LLM agents.
//!
//! A [`template::TemplateDocument`] is processed section by section in
//! reading order. For each text section a
//! [`session::GenerationSession`] asks a semantics agent what the section is
//! for, asks a retrieval agent whether the accumulated prompt already holds
//! the data it needs, and asks a generation agent to write it. Missing data
//! pauses the session for a human answer.
//!
//! Model calls go through [`gateway::Gateway`]: a live HTTP client, a
//! fixture-driven stub for deterministic runs, or a transcript replayer.

pub mod cli;
pub mod gateway;
pub mod prompts;
pub mod service;
pub mod session;
pub mod template;

pub use gateway::{Gateway, GatewayConfig, GatewayError, ScriptedGateway};
pub use prompts::{AgentRole, PromptLibrary, PromptSet};
pub use session::{GenerationSession, OutputDocument, SessionError, StepEvent};
pub use template::{TemplateDocument, TemplateSection};
