//! Randomized scenarios shared by the integration and acceptance tests.
//!
//! A scenario is a template plus a fixture set that answers every request
//! the template can produce, plus a script of user actions. Text section
//! `i` has directive `Do task {i}`. When the section needs data, retrieval
//! reports `item {i}` missing until the accumulated prompt contains the
//! marker `[answer {i}]`.

#![allow(dead_code)]

pub mod invariants;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use semdoc::gateway::{Fixture, ScriptedGateway};
use semdoc::prompts::{AgentRole, ALL_INFO};
use semdoc::session::{save_session, GenerationSession, SessionOptions, StepEvent};
use semdoc::template::{BoundingBox, SectionKind, TemplateDocument, TemplateSection};

pub const INITIAL_PROMPT: &str =
    "My name is John Doe, i want write a letter for Random University, i am a student in Computer Science";

pub fn letter_fixtures_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/letter_demo.json")
}

pub fn letter_gateway() -> ScriptedGateway {
    ScriptedGateway::from_file(&letter_fixtures_path()).expect("demo fixtures load")
}

pub fn answer_marker(i: usize) -> String {
    format!("[answer {i}]")
}

pub fn directive(i: usize) -> String {
    format!("Do task {i}")
}

pub fn generated_text(i: usize, answered: bool) -> String {
    if answered {
        format!("Generated {i} with answer")
    } else {
        format!("Generated {i}")
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub template: TemplateDocument,
    pub initial_prompt: String,
    /// Index of each section in `template.sections` -> scenario number used
    /// in fixtures, for text sections.
    pub numbers: Vec<Option<usize>>,
    pub needs_data: Vec<bool>,
    pub fixtures: Vec<Fixture>,
}

fn random_kind(rng: &mut StdRng) -> SectionKind {
    match rng.gen_range(0..10) {
        0 | 1 => SectionKind::Figure,
        2 => SectionKind::Table,
        _ => SectionKind::Text,
    }
}

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=10);
    let mut sections = Vec::new();
    for i in 0..n {
        let kind = random_kind(&mut rng);
        let bbox = rng.gen_bool(0.7).then(|| {
            let x0 = rng.gen_range(0.0..400.0f64).round();
            let y0 = rng.gen_range(0.0..700.0f64).round();
            BoundingBox::new(x0, y0, x0 + 100.0, y0 + 20.0).unwrap()
        });
        sections.push(TemplateSection {
            id: format!("sec{i}"),
            kind,
            content: if kind == SectionKind::Text {
                format!("Section {i}: lorem ipsum {}", rng.gen_range(0..1000))
            } else {
                String::new()
            },
            page: rng.gen_range(0..2),
            bbox,
        });
    }
    let template = TemplateDocument::new(Some(format!("Scenario {seed}")), sections).unwrap();

    let mut numbers = Vec::new();
    let mut needs_data = Vec::new();
    let mut fixtures = Vec::new();
    let mut pre_answered = Vec::new();
    for s in &template.sections {
        if !s.is_text() {
            numbers.push(None);
            needs_data.push(false);
            continue;
        }
        let i: usize = s.id.trim_start_matches("sec").parse().unwrap();
        numbers.push(Some(i));
        let needs = rng.gen_bool(0.6);
        needs_data.push(needs);
        if needs && rng.gen_bool(0.2) {
            pre_answered.push(answer_marker(i));
        }
        let task = format!(
            "I want you to satisfy this instruction\n{}\nWhat is the missing information?",
            directive(i)
        );
        fixtures.push(Fixture::new(
            AgentRole::SemanticsIdentification,
            s.content.clone(),
            directive(i),
        ));
        if needs {
            fixtures.push(Fixture::new(
                AgentRole::InformationRetrieval,
                task.clone(),
                format!("The missing information to satisfy the request is item {i}."),
            ));
            fixtures.push(
                Fixture::new(
                    AgentRole::InformationRetrieval,
                    task,
                    format!("The missing information to satisfy the request is {ALL_INFO}."),
                )
                .when_system_contains(answer_marker(i)),
            );
        } else {
            fixtures.push(Fixture::new(
                AgentRole::InformationRetrieval,
                task,
                ALL_INFO,
            ));
        }
        fixtures.push(Fixture::new(
            AgentRole::ContentGeneration,
            directive(i),
            generated_text(i, false),
        ));
        fixtures.push(
            Fixture::new(
                AgentRole::ContentGeneration,
                directive(i),
                generated_text(i, true),
            )
            .when_system_contains(answer_marker(i)),
        );
    }
    let mut initial_prompt = String::from(INITIAL_PROMPT);
    for m in pre_answered {
        initial_prompt.push(' ');
        initial_prompt.push_str(&m);
    }
    Scenario {
        seed,
        template,
        initial_prompt,
        numbers,
        needs_data,
        fixtures,
    }
}

impl Scenario {
    pub fn gateway(&self) -> ScriptedGateway {
        ScriptedGateway::new(self.fixtures.clone()).unwrap()
    }

    pub fn start(&self) -> GenerationSession {
        GenerationSession::start(
            self.template.clone(),
            &self.initial_prompt,
            SessionOptions {
                session_id: Some(format!("scenario-{}", self.seed)),
                ..SessionOptions::default()
            },
        )
    }
}

/// What the user does next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Step,
    /// Answer the pending intervention with this text.
    Answer(String),
    Skip,
}

/// Deterministic user behaviour driven by its own RNG.
pub struct ActionScript {
    rng: StdRng,
}

impl ActionScript {
    pub fn new(seed: u64) -> Self {
        ActionScript {
            rng: StdRng::seed_from_u64(seed ^ 0x5eed_u64),
        }
    }

    /// Picks the next action for `session`, or None when it is completed.
    pub fn next(&mut self, session: &GenerationSession, scenario: &Scenario) -> Option<Action> {
        if session.is_completed() {
            return None;
        }
        if session.pending_intervention().is_some() {
            let number = scenario.numbers[session.cursor()].expect("only text sections pause");
            return Some(match self.rng.gen_range(0..10) {
                0..=3 => {
                    let pad = if self.rng.gen_bool(0.5) { "  " } else { "" };
                    Action::Answer(format!(
                        "{pad}The value is {}\n{pad}",
                        answer_marker(number)
                    ))
                }
                4 | 5 => Action::Answer(format!(" unrelated note {}", self.rng.gen_range(0..100))),
                6 | 7 => Action::Answer(if self.rng.gen_bool(0.5) {
                    String::new()
                } else {
                    "   ".into()
                }),
                _ => Action::Skip,
            });
        }
        if session.current().is_some() && self.rng.gen_range(0..20) == 0 {
            return Some(Action::Skip);
        }
        Some(Action::Step)
    }
}

/// Outcome of applying one action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Event(StepEvent),
    Answered,
    Skipped(String),
}

pub fn apply(
    session: &mut GenerationSession,
    gateway: &dyn semdoc::Gateway,
    action: &Action,
) -> Result<Outcome, String> {
    let r = match action {
        Action::Step => session.step(gateway).map(Outcome::Event),
        Action::Answer(text) => session
            .provide_intervention(text)
            .map(|_| Outcome::Answered),
        Action::Skip => session.skip_section().map(Outcome::Skipped),
    };
    r.map_err(|e| format!("{action:?} failed: {e}"))
}

/// Session file as JSON with the session id and exchange timestamps blanked,
/// so runs that differ only in wall-clock time and id compare equal.
pub fn normalized(session: &GenerationSession) -> Value {
    let mut v: Value = serde_json::from_slice(&save_session(session)).unwrap();
    v["session_id"] = Value::Null;
    if let Some(ex) = v["transcript"].as_array_mut() {
        for e in ex {
            e["timestamp"] = Value::Null;
        }
    }
    v
}
