//! Property checks over one randomized scenario run.

use semdoc::gateway::ReplayGateway;
use semdoc::session::{load_session, save_session, GenerationSession, SessionError, StepEvent};
use semdoc::Gateway;
use serde_json::Value;

use super::{
    answer_marker, apply, generated_text, normalized, random_scenario, Action, ActionScript,
    Outcome, Scenario,
};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Everything observable about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub log: Vec<(Action, Outcome)>,
    pub final_state: Value,
    pub session: GenerationSession,
    pub interventions_seen: usize,
}

/// Per-action checks: the accumulated prompt only grows, skip leaves it
/// byte-identical, answers are stored verbatim and declines store nothing.
fn check_transition(
    before: &GenerationSession,
    after: &GenerationSession,
    action: &Action,
) -> Result<(), String> {
    let old = before.accumulated().entries();
    let new = after.accumulated().entries();
    ensure!(
        new.len() >= old.len() && new[..old.len()] == *old,
        "accumulated prompt lost or changed entries"
    );
    let (old_text, new_text) = (before.render_accumulated(), after.render_accumulated());
    ensure!(
        new_text.starts_with(&old_text),
        "rendered prompt is not an extension"
    );
    match action {
        Action::Skip => {
            ensure!(
                old_text == new_text && old == new,
                "skip changed the accumulated prompt"
            );
        }
        Action::Answer(text) if text.trim().is_empty() => {
            ensure!(old == new, "declining changed the accumulated prompt");
        }
        Action::Answer(text) => {
            ensure!(
                new.len() == old.len() + 1,
                "answer did not add exactly one entry"
            );
            ensure!(
                new.last().unwrap().text == *text,
                "answer not stored verbatim"
            );
        }
        Action::Step => {
            ensure!(old == new, "a step modified the accumulated prompt");
        }
    }
    Ok(())
}

/// Drives a scenario to completion. With `reload_at_pause` the session is
/// saved and reloaded at every intervention and the run continues on the
/// reloaded copy.
pub fn drive(
    scenario: &Scenario,
    gateway: &dyn Gateway,
    reload_at_pause: bool,
) -> Result<Run, String> {
    let mut session = scenario.start();
    let mut script = ActionScript::new(scenario.seed);
    let mut log = Vec::new();
    let mut interventions_seen = 0;
    let mut guard = 0;
    while let Some(action) = script.next(&session, scenario) {
        guard += 1;
        ensure!(guard < 500, "run did not terminate");
        let before = session.clone();
        let outcome = apply(&mut session, gateway, &action)?;
        check_transition(&before, &session, &action)?;
        if let Outcome::Event(StepEvent::InterventionRequired { .. }) = &outcome {
            interventions_seen += 1;
            let bytes = save_session(&session);
            let loaded = load_session(&bytes).map_err(|e| format!("reload failed: {e}"))?;
            ensure!(
                loaded == session,
                "reloaded session differs from the paused one"
            );
            ensure!(
                save_session(&loaded) == bytes,
                "save(load(save(s))) is not byte-stable"
            );
            if reload_at_pause {
                session = loaded;
            }
        }
        log.push((action, outcome));
    }
    Ok(Run {
        log,
        final_state: normalized(&session),
        session,
        interventions_seen,
    })
}

/// Terminality and output checks against an oracle derived from the
/// scenario: n resolving outcomes then exactly one `Completed`, step after
/// completion fails, and each generated slot matches the fixture chosen by
/// whether the section's answer marker reached the accumulated prompt.
fn check_run(scenario: &Scenario, run: &Run, gateway: &dyn Gateway) -> Result<(), String> {
    let n = scenario.template.sections.len();
    let resolving = run
        .log
        .iter()
        .filter(|(_, o)| {
            matches!(
                o,
                Outcome::Event(
                    StepEvent::SectionGenerated { .. } | StepEvent::SectionCarried { .. }
                ) | Outcome::Skipped(_)
            )
        })
        .count();
    ensure!(
        resolving == n,
        "{resolving} resolving outcomes for {n} sections"
    );
    let completed: Vec<usize> = run
        .log
        .iter()
        .enumerate()
        .filter(|(_, (_, o))| *o == Outcome::Event(StepEvent::Completed))
        .map(|(i, _)| i)
        .collect();
    ensure!(
        completed == vec![run.log.len() - 1],
        "Completed must be the single last event"
    );

    let mut session = run.session.clone();
    ensure!(session.is_resolved(), "sections left unresolved");
    ensure!(
        matches!(session.step(gateway), Err(SessionError::SessionDone)),
        "step after completion must fail with SessionDone"
    );

    let final_text = session.render_accumulated();
    let doc = session.assemble_document().map_err(|e| e.to_string())?;
    let mut slots = doc.slots.iter();
    for (idx, (tpl, state)) in scenario
        .template
        .sections
        .iter()
        .zip(session.sections())
        .enumerate()
    {
        let skipped = run
            .log
            .iter()
            .any(|(_, o)| *o == Outcome::Skipped(tpl.id.clone()));
        if skipped {
            ensure!(
                state.status.as_str() == "skipped",
                "{} should be skipped",
                tpl.id
            );
            continue;
        }
        let slot = slots
            .next()
            .ok_or_else(|| format!("missing slot for {}", tpl.id))?;
        ensure!(
            slot.section_id == tpl.id,
            "slot order differs at {}",
            tpl.id
        );
        match scenario.numbers[idx] {
            None => ensure!(
                state.status.as_str() == "carried",
                "{} should be carried",
                tpl.id
            ),
            Some(i) => {
                let answered = final_text.contains(&answer_marker(i));
                let expected = generated_text(i, answered);
                ensure!(
                    slot.text == expected,
                    "{}: got {:?}, expected {expected:?}",
                    tpl.id,
                    slot.text
                );
            }
        }
    }
    ensure!(slots.next().is_none(), "extra output slots");
    Ok(())
}

/// All invariants for one seed. Returns the number of interventions seen.
pub fn check_seed(seed: u64) -> Result<usize, String> {
    let scenario = random_scenario(seed);
    let gw = scenario.gateway();
    let plain = drive(&scenario, &gw, false)?;
    check_run(&scenario, &plain, &gw)?;

    let second = drive(&scenario, &scenario.gateway(), false)?;
    ensure!(
        second.log == plain.log,
        "two scripted runs produced different event logs"
    );
    ensure!(
        second.final_state == plain.final_state,
        "two scripted runs ended in different states"
    );

    let reloaded = drive(&scenario, &gw, true)?;
    ensure!(
        reloaded.log == plain.log,
        "reloading at pauses changed the event log"
    );
    ensure!(
        reloaded.final_state == plain.final_state,
        "reloading at pauses changed the final state"
    );

    let replay = ReplayGateway::new(plain.session.transcript());
    let replayed = drive(&scenario, &replay, false)?;
    ensure!(
        replayed.log == plain.log,
        "transcript replay produced a different event log"
    );
    let mut expected = plain.final_state.clone();
    let mut got = replayed.final_state.clone();
    for v in [&mut expected, &mut got] {
        for e in v["transcript"].as_array_mut().into_iter().flatten() {
            e["mode"] = Value::Null;
        }
    }
    ensure!(
        got == expected,
        "transcript replay ended in a different state"
    );
    Ok(plain.interventions_seen)
}
