//! Acceptance suite. Runs every primary criterion and prints one PASS/FAIL
//! line per criterion; exits non-zero if any fails.

mod common;

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use serde_json::{json, Value};
use tower::ServiceExt;

use semdoc::gateway::{Fixture, GatewayError};
use semdoc::prompts::{
    compose_retrieval_prompt, parse_retrieval_response, parse_semantics_response, AgentRole,
    ChatRequest, PromptError, PromptLibrary, PromptVersionId, RequestLimits, RetrievalOutcome,
    ALL_INFO, DEFAULT_CONTEXT_LIMIT,
};
use semdoc::service::{router, AppState, ServiceConfig};
use semdoc::session::{
    load_session, start_session, AccumulatedPrompt, Provenance, SessionError, StepEvent,
};
use semdoc::template::{parse_plaintext_template, TemplateDocument};
use semdoc::Gateway;

use common::invariants::{check_seed, drive};
use common::{letter_gateway, normalized, random_scenario, Action, Outcome, INITIAL_PROMPT};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Wraps a gateway and records every request it receives.
struct Recording<G> {
    inner: G,
    calls: Mutex<Vec<(AgentRole, ChatRequest)>>,
}

impl<G> Recording<G> {
    fn new(inner: G) -> Self {
        Recording {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    fn calls(&self) -> Vec<(AgentRole, ChatRequest)> {
        self.calls.lock().unwrap().clone()
    }
}

impl<G: Gateway> Gateway for Recording<G> {
    fn mode(&self) -> semdoc::gateway::ExchangeMode {
        self.inner.mode()
    }

    fn complete(&self, role: AgentRole, request: &ChatRequest) -> Result<String, GatewayError> {
        self.calls.lock().unwrap().push((role, request.clone()));
        self.inner.complete(role, request)
    }
}

fn fixture_file() -> Vec<Fixture> {
    serde_json::from_slice(&std::fs::read(common::letter_fixtures_path()).unwrap()).unwrap()
}

/// Reply of the demo fixture for `role` and `user` with exactly `needles`.
fn fixture_reply(role: AgentRole, user_prefix: &str, needles: &[&str]) -> (String, String) {
    let f = fixture_file()
        .into_iter()
        .find(|f| {
            f.role == role && f.user_match.starts_with(user_prefix) && f.system_contains == needles
        })
        .unwrap_or_else(|| panic!("no fixture for {role} {user_prefix:?} {needles:?}"));
    (f.user_match, f.reply)
}

fn prompt_file(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("prompts")
            .join(name),
    )
    .unwrap()
}

fn within(limit: Duration, start: Instant) -> Check {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

fn semantics_transcript_replay() -> Check {
    let start = Instant::now();
    let v3 = prompt_file("semantics_identification.v3_few_shot.txt");
    let v3_needles = ["Give just the action to do.", "For example, if you read"];
    let cases = [
        ("Your Name", "Add your full name"),
        ("Dear Mr./Ms. (Lastname):", "Add salutation"),
        ("First paragraphs :", ""),
    ];
    for (prefix, expected) in cases {
        let (section_text, reply) =
            fixture_reply(AgentRole::SemanticsIdentification, prefix, &v3_needles);
        if !expected.is_empty() {
            ensure!(
                reply == expected,
                "fixture reply for {prefix:?} is {reply:?}"
            );
        }
        let template = TemplateDocument::new(
            None,
            vec![semdoc::TemplateSection::text("s1", section_text.clone())],
        )
        .map_err(|e| e.to_string())?;
        let gw = Recording::new(letter_gateway());
        let mut session = start_session(template, INITIAL_PROMPT);
        session.step(&gw).map_err(|e| format!("{prefix:?}: {e}"))?;
        let calls = gw.calls();
        let (role, req) = &calls[0];
        ensure!(
            *role == AgentRole::SemanticsIdentification,
            "first call went to {role}"
        );
        ensure!(
            req.system.as_bytes() == v3.as_bytes(),
            "composed system prompt differs from the v3 resource"
        );
        ensure!(
            req.user == section_text,
            "user prompt is not the section text"
        );
        let directives = session.sections()[0]
            .directives
            .clone()
            .ok_or("no directives")?;
        ensure!(
            directives.instructions == reply,
            "{prefix:?}: directives {:?} != {reply:?}",
            directives.instructions
        );
        ensure!(directives.raw == reply, "raw reply not preserved");
    }

    // the older prompt versions route their replies unchanged as well
    let lib = PromptLibrary::builtin();
    for (version, needles) in [
        (PromptVersionId::Baseline, &[][..]),
        (
            PromptVersionId::V2ActionOnly,
            &["Give just the action to do."][..],
        ),
    ] {
        let (_, reply) = fixture_reply(AgentRole::SemanticsIdentification, "Your Name", needles);
        let prompts = lib
            .select(
                version,
                PromptVersionId::V3FewShot,
                PromptVersionId::V3FewShot,
            )
            .map_err(|e| e.to_string())?;
        let req = semdoc::prompts::compose_semantics_prompt(
            &semdoc::TemplateSection::text("s1", "Your Name"),
            &prompts.semantics,
            &RequestLimits::default(),
        )
        .map_err(|e| e.to_string())?;
        let file = format!("semantics_identification.{version}.txt");
        ensure!(
            req.system == prompt_file(&file),
            "{file} not composed verbatim"
        );
        let got = letter_gateway()
            .complete(AgentRole::SemanticsIdentification, &req)
            .map_err(|e| e.to_string())?;
        ensure!(got == reply, "{version}: wrong fixture routed");
        ensure!(
            parse_semantics_response(&got).unwrap().instructions == reply.trim(),
            "{version}: reply altered"
        );
    }
    within(Duration::from_secs(1), start)
}

fn sentinel_protocol() -> Check {
    let start = Instant::now();
    ensure!(
        parse_retrieval_response("The missing information to satisfy the request is [ALL_INFO].")
            == Ok(RetrievalOutcome::AllInfo),
        "ALL_INFO reply not recognised"
    );
    let (_, refined) = fixture_reply(
        AgentRole::InformationRetrieval,
        "I want you to satisfy this instruction\nAdd salutation",
        &["Strictly respond with only the information that is missing."],
    );
    ensure!(
        parse_retrieval_response(&refined)
            == Ok(RetrievalOutcome::Missing {
                description: "the salutation".into()
            }),
        "refined salutation reply parsed as {:?}",
        parse_retrieval_response(&refined)
    );

    // random text, with the token spliced in at a random char position half
    // of the time
    let strategy = (any::<String>(), any::<bool>(), any::<prop::sample::Index>()).prop_map(
        |(s, inject, at)| {
            if !inject {
                return s;
            }
            let chars: Vec<char> = s.chars().collect();
            let i = at.index(chars.len() + 1);
            let mut out: String = chars[..i].iter().collect();
            out.push_str(ALL_INFO);
            out.extend(&chars[i..]);
            out
        },
    );
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strategy, |reply| {
            let has_token = reply.contains(ALL_INFO);
            match parse_retrieval_response(&reply) {
                Ok(RetrievalOutcome::AllInfo) => prop_assert!(has_token),
                Ok(RetrievalOutcome::Missing { .. }) => prop_assert!(!has_token),
                Err(PromptError::EmptyReply { .. }) => prop_assert!(reply.trim().is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(Duration::from_secs(1), start)
}

fn run_letter(
    section: &str,
    answers: &[&str],
) -> Result<(Vec<StepEvent>, semdoc::GenerationSession), String> {
    let template = parse_plaintext_template(section).map_err(|e| e.to_string())?;
    let gw = letter_gateway();
    let mut session = start_session(template, INITIAL_PROMPT);
    let mut answers = answers.iter();
    let mut events = Vec::new();
    loop {
        let ev = session.step(&gw).map_err(|e| e.to_string())?;
        events.push(ev.clone());
        match ev {
            StepEvent::Completed => break,
            StepEvent::InterventionRequired { .. } => {
                let a = answers.next().ok_or("unexpected intervention")?;
                session.provide_intervention(a).map_err(|e| e.to_string())?;
            }
            _ => {}
        }
        ensure!(events.len() < 20, "no completion");
    }
    Ok((events, session))
}

fn name_flow() -> Check {
    let start = Instant::now();
    let (events, session) = run_letter("Your Name", &[])?;
    let interventions = events
        .iter()
        .filter(|e| matches!(e, StepEvent::InterventionRequired { .. }))
        .count();
    ensure!(interventions == 0, "{interventions} interventions");
    ensure!(
        events.last() == Some(&StepEvent::Completed),
        "did not complete"
    );
    let doc = session.assemble_document().map_err(|e| e.to_string())?;
    ensure!(
        doc.slots.len() == 1 && doc.slots[0].text.contains("John Doe"),
        "slots: {:?}",
        doc.slots
    );
    within(Duration::from_secs(1), start)
}

fn salutation_flow() -> Check {
    let start = Instant::now();
    let answer = "Mr. Smith";
    let (events, session) = run_letter("Dear Mr./Ms. (Lastname):", &[answer])?;
    let required: Vec<&StepEvent> = events
        .iter()
        .filter(|e| matches!(e, StepEvent::InterventionRequired { .. }))
        .collect();
    ensure!(
        required
            == vec![&StepEvent::InterventionRequired {
                section_id: "s1".into(),
                missing: "the salutation".into()
            }],
        "interventions: {required:?}"
    );
    let entries = session.accumulated().entries();
    ensure!(
        entries
            .iter()
            .any(|e| e.text == answer && e.provenance == Provenance::Intervention),
        "answer not stored verbatim: {entries:?}"
    );
    ensure!(
        session.render_accumulated().contains(answer),
        "answer missing from rendered prompt"
    );
    ensure!(
        session.sections()[0].status.as_str() == "generated",
        "section not generated"
    );
    ensure!(
        matches!(&events[events.len() - 2], StepEvent::SectionGenerated { text, .. } if text == "Dear Mr. Smith:"),
        "events: {events:?}"
    );
    within(Duration::from_secs(1), start)
}

fn lorem_case() -> Check {
    let start = Instant::now();
    let expected = RetrievalOutcome::Missing {
        description: "the content of the main body of the document".into(),
    };
    let (_, reply) = fixture_reply(
        AgentRole::InformationRetrieval,
        "I want you to satisfy this instruction\nWrite the main body",
        &["Strictly respond with only the information that is missing."],
    );
    ensure!(
        parse_retrieval_response(&reply) == Ok(expected),
        "direct parse of {reply:?}"
    );
    let (section, _) = fixture_reply(
        AgentRole::SemanticsIdentification,
        "Lorem ipsum",
        &["Give just the action to do.", "For example, if you read"],
    );
    let template = parse_plaintext_template(&section).map_err(|e| e.to_string())?;
    let mut session = start_session(template, INITIAL_PROMPT);
    let ev = session.step(&letter_gateway()).map_err(|e| e.to_string())?;
    ensure!(
        ev == StepEvent::InterventionRequired {
            section_id: "s1".into(),
            missing: "the content of the main body of the document".into()
        },
        "event: {ev:?}"
    );
    within(Duration::from_secs(1), start)
}

fn invariant_suite() -> Check {
    let start = Instant::now();
    let mut interventions = 0;
    let mut sizes = std::collections::BTreeSet::new();
    for seed in 0..120u64 {
        sizes.insert(random_scenario(seed).template.sections.len());
        interventions += check_seed(seed).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    ensure!(sizes.len() == 10, "template sizes covered: {sizes:?}");
    ensure!(
        interventions >= 100,
        "only {interventions} interventions exercised"
    );
    within(Duration::from_secs(30), start)
}

fn budget_property() -> Check {
    // oracle: one token per 4 chars, rounded up, plus the output allowance
    let est = |s: &str| s.chars().count().div_ceil(4);
    let limits = RequestLimits::default();
    ensure!(
        limits.context_limit == 16_385 && DEFAULT_CONTEXT_LIMIT == 16_385,
        "default context limit"
    );
    let lib = PromptLibrary::builtin();
    let version = lib.default_for(AgentRole::InformationRetrieval);
    let directives = parse_semantics_response("Add your full name").unwrap();
    let task = semdoc::prompts::retrieval_task(&directives);
    let fixed = est(&version.system_text.replace("<Accumulated prompt>", ""))
        + est(&task)
        + limits.max_output_tokens;
    ensure!(
        fixed < limits.context_limit,
        "fixed part alone exceeds the limit"
    );
    // the largest prompt that fits, then one that does not
    let room = (limits.context_limit - fixed) * 4;
    let fits = "a".repeat(room - 8);
    for (text, should_fit) in [(fits.clone(), true), ("a".repeat(room + 8), false)] {
        let mut acc = AccumulatedPrompt::new();
        acc.append(text.clone(), Provenance::Initial, None);
        let composed = compose_retrieval_prompt(&acc, &directives, version, &limits);
        let required = est(&version.system_text.replace("<Accumulated prompt>", &text))
            + est(&task)
            + limits.max_output_tokens;
        ensure!(
            (required <= limits.context_limit) == should_fit,
            "oracle setup wrong: {required}"
        );
        match composed {
            Ok(_) => ensure!(
                should_fit,
                "over-budget request composed ({required} tokens)"
            ),
            Err(PromptError::Budget { required: r, limit }) => {
                ensure!(!should_fit, "fitting request rejected");
                ensure!(
                    r == required && limit == 16_385,
                    "budget error reports {r}/{limit}, oracle {required}"
                );
            }
            Err(e) => return Err(e.to_string()),
        }
    }

    // through the session: the over-budget retrieval request never reaches
    // the gateway
    let gw = Recording::new(letter_gateway());
    let template = parse_plaintext_template("Your Name").unwrap();
    let mut session = start_session(template, &"x".repeat(70_000));
    let before = session.clone();
    match session.step(&gw) {
        Err(SessionError::Prompt(PromptError::Budget { required, limit })) => {
            ensure!(
                required > 16_385 && limit == 16_385,
                "reported {required}/{limit}"
            );
        }
        other => return Err(format!("expected BudgetError, got {other:?}")),
    }
    let roles: Vec<AgentRole> = gw.calls().into_iter().map(|(r, _)| r).collect();
    ensure!(
        roles == vec![AgentRole::SemanticsIdentification],
        "gateway calls: {roles:?}"
    );
    ensure!(
        session.accumulated() == before.accumulated(),
        "accumulated prompt changed"
    );
    ensure!(
        session.transcript().len() == 1,
        "transcript has {} entries",
        session.transcript().len()
    );
    Ok(())
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> Result<(StatusCode, Value), String> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).map_err(|e| format!("{uri}: {e}"))?
    };
    Ok((status, value))
}

async fn contract_case(seed: u64, dir: &Path) -> Check {
    let scenario = random_scenario(seed);
    let gw = scenario.gateway();
    let direct = drive(&scenario, &gw, false)?;

    let state = AppState::open(dir, ServiceConfig::default())
        .map_err(|e| e.to_string())?
        .with_gateway(Arc::new(scenario.gateway()));
    let app = router(Arc::new(state));
    let template: Value = serde_json::from_str(&scenario.template.to_json()).unwrap();
    let (status, summary) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"template": template, "initial_prompt": scenario.initial_prompt, "mode": "scripted"})),
    )
    .await?;
    ensure!(status == StatusCode::CREATED, "create: {status} {summary}");
    let id = summary["session_id"]
        .as_str()
        .ok_or("no session id")?
        .to_string();

    for (action, outcome) in &direct.log {
        match (action, outcome) {
            (Action::Step, Outcome::Event(ev)) => {
                let (status, body) =
                    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await?;
                ensure!(status == StatusCode::OK, "advance: {status} {body}");
                let got: StepEvent = serde_json::from_value(body).map_err(|e| e.to_string())?;
                ensure!(got == *ev, "service event {got:?} != engine event {ev:?}");
            }
            (Action::Answer(text), _) => {
                let (status, body) = call(
                    &app,
                    "POST",
                    &format!("/sessions/{id}/intervention"),
                    Some(json!({ "text": text })),
                )
                .await?;
                ensure!(
                    status == StatusCode::NO_CONTENT,
                    "intervention: {status} {body}"
                );
            }
            (Action::Skip, _) => {
                let (status, body) =
                    call(&app, "POST", &format!("/sessions/{id}/skip"), None).await?;
                ensure!(status == StatusCode::NO_CONTENT, "skip: {status} {body}");
            }
            other => return Err(format!("unexpected log entry {other:?}")),
        }
    }

    let stored = load_session(
        &std::fs::read(dir.join(format!("{id}.session.json"))).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        normalized(&stored) == direct.final_state,
        "persisted service state differs from engine state"
    );

    let (status, doc) = call(&app, "GET", &format!("/sessions/{id}/document"), None).await?;
    ensure!(status == StatusCode::OK, "document: {status}");
    let expected = serde_json::to_value(direct.session.assemble_document().unwrap()).unwrap();
    ensure!(doc == expected, "document differs");

    let (_, summary) = call(&app, "GET", &format!("/sessions/{id}"), None).await?;
    ensure!(
        summary["completed"] == json!(true),
        "summary not completed: {summary}"
    );
    let log = std::fs::read_to_string(dir.join(format!("{id}.events.ndjson")))
        .map_err(|e| e.to_string())?;
    let frames: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure!(
        frames.len() == direct.log.len() + 1,
        "{} frames for {} actions",
        frames.len(),
        direct.log.len()
    );
    for (i, f) in frames.iter().enumerate() {
        ensure!(
            f["sequence"] == json!(i as u64 + 1),
            "frame sequence gap at {i}"
        );
    }
    Ok(())
}

fn api_contract() -> Check {
    let start = Instant::now();
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    for seed in 500..550u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        rt.block_on(contract_case(seed, dir.path()))
            .map_err(|e| format!("seed {seed}: {e}"))?;
    }
    within(Duration::from_secs(60), start)
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "semantics agent transcript replay",
            semantics_transcript_replay,
        ),
        ("sentinel protocol", sentinel_protocol),
        ("name section flow without intervention", name_flow),
        ("salutation flow with one intervention", salutation_flow),
        ("lorem ipsum retrieval case", lorem_case),
        ("session invariant suite", invariant_suite),
        ("token budget property", budget_property),
        ("service API contract", api_contract),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(()) => println!("PASS [{}] {name} ({ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL [{}] {name} ({ms} ms): {e}", i + 1);
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
