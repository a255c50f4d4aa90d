//! C ABI for semdoc.
//!
//! Objects are opaque handles created by `*_new`/`*_parse`/`*_load` style
//! functions and released with the matching `*_free`. Every fallible
//! function returns a [`SemdocStatus`]; on failure
//! [`semdoc_last_error_message`] describes the error. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`semdoc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use semdoc::gateway::{GatewayError, ScriptedGateway};
use semdoc::prompts::{parse_retrieval_response, PromptError, RetrievalOutcome};
use semdoc::session::{
    load_session, save_session, start_session, GenerationSession, SessionError, StepEvent,
};
use semdoc::template::{parse_plaintext_template, parse_template_json, TemplateDocument};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemdocStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    TemplateError = 3,
    FixtureError = 4,
    GatewayError = 5,
    BudgetError = 6,
    StateError = 7,
    SessionDone = 8,
    Incomplete = 9,
    SessionFileError = 10,
    PromptError = 11,
    Panic = 12,
}

/// What a call to [`semdoc_session_step`] produced.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemdocEventKind {
    SectionGenerated = 0,
    InterventionRequired = 1,
    SectionCarried = 2,
    Completed = 3,
}

pub struct SemdocTemplate(TemplateDocument);

pub struct SemdocGateway(ScriptedGateway);

pub struct SemdocSession(GenerationSession);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SemdocStatus, String);

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::SessionDone => SemdocStatus::SessionDone,
            SessionError::State(_) => SemdocStatus::StateError,
            SessionError::Incomplete(_) => SemdocStatus::Incomplete,
            SessionError::Gateway(GatewayError::Fixture(_)) => SemdocStatus::FixtureError,
            SessionError::Gateway(_) => SemdocStatus::GatewayError,
            SessionError::Prompt(PromptError::Budget { .. }) => SemdocStatus::BudgetError,
            SessionError::Prompt(PromptError::EmptyReply { .. }) => SemdocStatus::GatewayError,
            SessionError::Prompt(_) => SemdocStatus::PromptError,
            SessionError::Parse(_) | SessionError::Version { .. } => SemdocStatus::SessionFileError,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemdocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SemdocStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SemdocStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(
            SemdocStatus::NullArgument,
            format!("{name} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SemdocStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SemdocStatus::NullArgument, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SemdocStatus::NullArgument, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(
            SemdocStatus::NullArgument,
            format!("{name} is null"),
        ));
    }
    out.write(value);
    Ok(())
}

fn owned_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\\0"))
        .expect("nul bytes replaced")
        .into_raw()
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn semdoc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semdoc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn semdoc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a JSON template.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_template_parse_json(
    json: *const c_char,
    out: *mut *mut SemdocTemplate,
) -> SemdocStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let doc = parse_template_json(json.as_bytes())
            .map_err(|e| Failure(SemdocStatus::TemplateError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(SemdocTemplate(doc))), "out")
    })
}

/// Parses a plain-text template (sections separated by `---` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_template_parse_text(
    text: *const c_char,
    out: *mut *mut SemdocTemplate,
) -> SemdocStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let doc = parse_plaintext_template(text)
            .map_err(|e| Failure(SemdocStatus::TemplateError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(SemdocTemplate(doc))), "out")
    })
}

/// Number of sections, or 0 for a null handle.
///
/// # Safety
/// `template` must be null or a live template handle.
#[no_mangle]
pub unsafe extern "C" fn semdoc_template_section_count(template: *const SemdocTemplate) -> usize {
    template.as_ref().map_or(0, |t| t.0.sections.len())
}

/// # Safety
/// `template` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semdoc_template_free(template: *mut SemdocTemplate) {
    if !template.is_null() {
        drop(Box::from_raw(template));
    }
}

/// Builds a scripted gateway from fixture JSON.
///
/// # Safety
/// `fixtures_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_gateway_scripted_from_json(
    fixtures_json: *const c_char,
    out: *mut *mut SemdocGateway,
) -> SemdocStatus {
    guard(|| {
        let json = str_arg(fixtures_json, "fixtures_json")?;
        let gw = ScriptedGateway::from_json(json.as_bytes())
            .map_err(|e| Failure(SemdocStatus::FixtureError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(SemdocGateway(gw))), "out")
    })
}

/// # Safety
/// `gateway` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semdoc_gateway_free(gateway: *mut SemdocGateway) {
    if !gateway.is_null() {
        drop(Box::from_raw(gateway));
    }
}

/// Starts a session over a copy of `template` with default prompts and
/// limits. `initial_prompt` may be null.
///
/// # Safety
/// Pointers must be valid as documented; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_start(
    template: *const SemdocTemplate,
    initial_prompt: *const c_char,
    out: *mut *mut SemdocSession,
) -> SemdocStatus {
    guard(|| {
        let template = ref_arg(template, "template")?;
        let prompt = if initial_prompt.is_null() {
            ""
        } else {
            str_arg(initial_prompt, "initial_prompt")?
        };
        let session = start_session(template.0.clone(), prompt);
        put(out, Box::into_raw(Box::new(SemdocSession(session))), "out")
    })
}

/// Advances the session by one step. On success `kind_out` holds the event
/// kind and `event_json_out` (if not null) a JSON rendering of the event.
///
/// # Safety
/// Handles must be live; out-pointers must be writable or null where noted.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_step(
    session: *mut SemdocSession,
    gateway: *const SemdocGateway,
    kind_out: *mut SemdocEventKind,
    event_json_out: *mut *mut c_char,
) -> SemdocStatus {
    guard(|| {
        let session = mut_arg(session, "session")?;
        let gateway = ref_arg(gateway, "gateway")?;
        if kind_out.is_null() {
            return Err(Failure(
                SemdocStatus::NullArgument,
                "kind_out is null".into(),
            ));
        }
        let event = session.0.step(&gateway.0)?;
        let kind = match &event {
            StepEvent::SectionGenerated { .. } => SemdocEventKind::SectionGenerated,
            StepEvent::InterventionRequired { .. } => SemdocEventKind::InterventionRequired,
            StepEvent::SectionCarried { .. } => SemdocEventKind::SectionCarried,
            StepEvent::Completed => SemdocEventKind::Completed,
        };
        kind_out.write(kind);
        if !event_json_out.is_null() {
            let json = serde_json::to_string(&event).expect("event serializes");
            event_json_out.write(owned_c_string(json));
        }
        Ok(())
    })
}

/// Answers the pending intervention; an empty string declines.
///
/// # Safety
/// `session` must be live; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_provide_intervention(
    session: *mut SemdocSession,
    text: *const c_char,
) -> SemdocStatus {
    guard(|| {
        let session = mut_arg(session, "session")?;
        let text = str_arg(text, "text")?;
        session.0.provide_intervention(text)?;
        Ok(())
    })
}

/// Skips the current section.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_skip(session: *mut SemdocSession) -> SemdocStatus {
    guard(|| {
        let session = mut_arg(session, "session")?;
        session.0.skip_section()?;
        Ok(())
    })
}

/// Writes the assembled output document as JSON to `out`.
///
/// # Safety
/// `session` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_assemble_json(
    session: *const SemdocSession,
    out: *mut *mut c_char,
) -> SemdocStatus {
    guard(|| {
        let session = ref_arg(session, "session")?;
        let doc = session.0.assemble_document()?;
        put(out, owned_c_string(doc.to_json()), "out")
    })
}

/// Serializes the session to its JSON file format.
///
/// # Safety
/// `session` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_save(
    session: *const SemdocSession,
    out: *mut *mut c_char,
) -> SemdocStatus {
    guard(|| {
        let session = ref_arg(session, "session")?;
        let text = String::from_utf8(save_session(&session.0)).expect("session file is UTF-8");
        put(out, owned_c_string(text), "out")
    })
}

/// Restores a session saved with [`semdoc_session_save`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_load(
    json: *const c_char,
    out: *mut *mut SemdocSession,
) -> SemdocStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let session = load_session(json.as_bytes())?;
        put(out, Box::into_raw(Box::new(SemdocSession(session))), "out")
    })
}

/// # Safety
/// `session` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semdoc_session_free(session: *mut SemdocSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Classifies a retrieval-agent reply. Sets `*all_info_out` to 1 when the
/// reply reports complete information; otherwise 0 and `*missing_out` holds
/// the missing-data description (null when all information is present).
///
/// # Safety
/// `reply` must be a NUL-terminated string; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn semdoc_parse_retrieval_response(
    reply: *const c_char,
    all_info_out: *mut c_int,
    missing_out: *mut *mut c_char,
) -> SemdocStatus {
    guard(|| {
        let reply = str_arg(reply, "reply")?;
        if all_info_out.is_null() || missing_out.is_null() {
            return Err(Failure(
                SemdocStatus::NullArgument,
                "output pointer is null".into(),
            ));
        }
        let outcome = parse_retrieval_response(reply).map_err(|e| match e {
            PromptError::EmptyReply { .. } => Failure(SemdocStatus::GatewayError, e.to_string()),
            other => Failure(SemdocStatus::PromptError, other.to_string()),
        })?;
        match outcome {
            RetrievalOutcome::AllInfo => {
                all_info_out.write(1);
                missing_out.write(ptr::null_mut());
            }
            RetrievalOutcome::Missing { description } => {
                all_info_out.write(0);
                missing_out.write(owned_c_string(description));
            }
        }
        Ok(())
    })
}
