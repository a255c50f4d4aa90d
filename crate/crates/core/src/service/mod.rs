//! HTTP API over generation sessions.
//!
//! | Method | Path | Result |
//! |---|---|---|
//! | POST | `/sessions` | 201, [`SessionSummary`] |
//! | GET | `/sessions` | list of [`SessionSummary`] |
//! | GET | `/sessions/{id}` | [`SessionSummary`] |
//! | GET | `/sessions/{id}/state` | [`SessionView`] |
//! | POST | `/sessions/{id}/advance[?auto=true]` | [`StepEvent`] |
//! | POST | `/sessions/{id}/intervention` | 204 |
//! | POST | `/sessions/{id}/skip` | 204 |
//! | GET | `/sessions/{id}/document[?format=text]` | [`OutputDocument`] or plain text |
//! | GET | `/sessions/{id}/events` | server-sent [`EventFrame`]s |
//!
//! Every state change is written to the data directory before the response
//! is sent and before the event is published.

mod events;
mod store;

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{ExchangeMode, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptSet, RequestLimits};
use crate::session::{
    GenerationSession, OutputDocument, PromptEntry, SectionStatus, SessionError, SessionOptions,
    StepEvent, DEFAULT_INTERVENTION_CAP,
};
use crate::template::{
    parse_plaintext_template, parse_template_auto, parse_template_json, SectionKind, TemplateError,
};

pub use events::{EventFrame, EventPayload, Notice};
pub use store::SessionMeta;
use store::{PersistJob, SessionSlot, SessionStore, SlotInner};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub prompts: PromptSet,
    pub limits: RequestLimits,
    pub intervention_cap: u32,
    /// Mode for sessions created without one.
    pub default_mode: ExchangeMode,
    /// When set, every request needs `Authorization: Bearer <token>` or
    /// `?access_token=<token>`.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            prompts: PromptSet::default(),
            limits: RequestLimits::default(),
            intervention_cap: DEFAULT_INTERVENTION_CAP,
            default_mode: ExchangeMode::Scripted,
            token: None,
        }
    }
}

pub struct AppState {
    store: SessionStore,
    scripted: Option<Arc<dyn Gateway>>,
    live: Option<Arc<dyn Gateway>>,
    config: ServiceConfig,
}

impl AppState {
    /// State without persistence.
    pub fn in_memory(config: ServiceConfig) -> Self {
        AppState {
            store: SessionStore::in_memory(),
            scripted: None,
            live: None,
            config,
        }
    }

    /// State persisted under `data_dir`; sessions already stored there are
    /// loaded.
    pub fn open(data_dir: &Path, config: ServiceConfig) -> std::io::Result<Self> {
        Ok(AppState {
            store: SessionStore::open(data_dir)?,
            scripted: None,
            live: None,
            config,
        })
    }

    /// Registers the gateway used by sessions of `gateway.mode()`.
    pub fn with_gateway(mut self, gateway: Arc<dyn Gateway>) -> Self {
        match gateway.mode() {
            ExchangeMode::Live => self.live = Some(gateway),
            _ => self.scripted = Some(gateway),
        }
        self
    }

    fn gateway(&self, mode: ExchangeMode) -> Result<Arc<dyn Gateway>, ApiError> {
        let gw = match mode {
            ExchangeMode::Live => self.live.clone(),
            ExchangeMode::Scripted => self.scripted.clone(),
            ExchangeMode::Replay => None,
        };
        gw.ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "mode_unavailable",
                format!("no {mode} gateway is configured"),
            )
        })
    }

    async fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.store.get(id).await.ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "not_found",
                format!("no session {id}"),
            )
        })
    }

    /// Stores the new session state, appends `payloads` to the event log,
    /// persists, then publishes.
    async fn commit(
        &self,
        slot: &SessionSlot,
        inner: &mut SlotInner,
        session: Option<GenerationSession>,
        payloads: Vec<EventPayload>,
    ) -> Result<(), ApiError> {
        let changed = session.as_ref().is_some_and(|s| *s != inner.session);
        if !changed && payloads.is_empty() {
            return Ok(());
        }
        if let Some(s) = session {
            inner.session = s;
        }
        let mut next = inner.events.last().map_or(0, |f| f.sequence);
        let frames: Vec<EventFrame> = payloads
            .into_iter()
            .map(|payload| {
                next += 1;
                EventFrame {
                    sequence: next,
                    payload,
                }
            })
            .collect();
        inner.events.extend(frames.iter().cloned());
        inner.meta.updated_at = Utc::now();
        self.store
            .persist(PersistJob::new(inner, &frames))
            .await
            .map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
            })?;
        for f in frames {
            let _ = slot.events_tx.send(f);
        }
        Ok(())
    }
}

/// JSON error body: `{"error": <kind>, "message": ..., ...details}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    details: serde_json::Map<String, Value>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
            details: serde_json::Map::new(),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = self.details;
        body.insert("error".into(), json!(self.kind));
        body.insert("message".into(), json!(self.message));
        (self.status, Json(Value::Object(body))).into_response()
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        let message = e.to_string();
        match e {
            TemplateError::Parse { offset, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "template_parse", message)
                    .with("offset", json!(offset))
            }
            TemplateError::Schema { field, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "template_schema", message)
                    .with("field", json!(field))
            }
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::SessionDone => {
                ApiError::new(StatusCode::CONFLICT, "session_done", message)
            }
            SessionError::State(_) => ApiError::new(StatusCode::CONFLICT, "invalid_state", message),
            SessionError::Incomplete(ids) => {
                ApiError::new(StatusCode::CONFLICT, "incomplete", message)
                    .with("unresolved", json!(ids))
            }
            SessionError::Gateway(GatewayError::FixtureMiss {
                role,
                digest,
                preview,
            }) => ApiError::new(StatusCode::BAD_GATEWAY, "fixture_miss", message).with(
                "fixture",
                json!({ "role": role, "digest": digest, "preview": preview }),
            ),
            SessionError::Gateway(_) => ApiError::new(StatusCode::BAD_GATEWAY, "gateway", message),
            SessionError::Prompt(PromptError::Budget { required, limit }) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "budget", message)
                    .with("required", json!(required))
                    .with("limit", json!(limit))
            }
            SessionError::Prompt(PromptError::EmptyReply { .. }) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "empty_reply", message)
            }
            SessionError::Prompt(_) | SessionError::Parse(_) | SessionError::Version { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateFormat {
    Json,
    Text,
}

/// `template` is the template file content as a string, or a JSON template
/// object. `template_format` is guessed from the content when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub template: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_format: Option<TemplateFormat>,
    #[serde(default)]
    pub initial_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ExchangeMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionRequest {
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub awaiting_intervention: usize,
    pub generated: usize,
    pub skipped: usize,
    pub carried: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingIntervention {
    pub section_id: String,
    pub missing: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub mode: ExchangeMode,
    pub total_sections: usize,
    pub counts: StatusCounts,
    pub cursor_section_id: Option<String>,
    pub awaiting: Option<PendingIntervention>,
    pub completed: bool,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl SessionSummary {
    fn of(session: &GenerationSession, meta: &SessionMeta) -> Self {
        let mut counts = StatusCounts::default();
        for s in session.sections() {
            *match s.status {
                SectionStatus::Pending => &mut counts.pending,
                SectionStatus::AwaitingIntervention => &mut counts.awaiting_intervention,
                SectionStatus::Generated => &mut counts.generated,
                SectionStatus::Skipped => &mut counts.skipped,
                SectionStatus::Carried => &mut counts.carried,
            } += 1;
        }
        SessionSummary {
            session_id: session.session_id().to_string(),
            mode: meta.mode,
            total_sections: session.sections().len(),
            counts,
            cursor_section_id: session.current().map(|s| s.section_id.clone()),
            awaiting: session.pending_intervention().map(|(section_id, missing)| {
                PendingIntervention {
                    section_id: section_id.to_string(),
                    missing: missing.to_string(),
                }
            }),
            completed: session.is_completed(),
            created_at: meta.created_at,
            updated_at: meta.updated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionView {
    pub section_id: String,
    pub kind: SectionKind,
    pub template_text: String,
    pub status: SectionStatus,
    pub missing: Option<String>,
    pub output_text: Option<String>,
    pub interventions: u32,
}

/// Everything a client needs to render a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub summary: SessionSummary,
    pub sections: Vec<SectionView>,
    pub accumulated: Vec<PromptEntry>,
    pub accumulated_text: String,
}

#[derive(Debug, Default, Deserialize)]
struct AdvanceQuery {
    #[serde(default)]
    auto: bool,
}

#[derive(Debug, Default, Deserialize)]
struct DocumentQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: Option<u64>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/intervention", post(intervene))
        .route("/sessions/{id}/skip", post(skip))
        .route("/sessions/{id}/document", get(document))
        .route("/sessions/{id}/events", get(stream_events))
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn authorize(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(token) = state.config.token.as_deref() else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query = req
        .uri()
        .query()
        .unwrap_or_default()
        .split('&')
        .find_map(|kv| kv.strip_prefix("access_token="));
    if bearer == Some(token) || query == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong token",
        )
        .into_response()
    }
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let Json(req) = body?;
    let template = match (&req.template, req.template_format) {
        (Value::String(s), Some(TemplateFormat::Text)) => parse_plaintext_template(s)?,
        (Value::String(s), Some(TemplateFormat::Json)) => parse_template_json(s.as_bytes())?,
        (Value::String(s), None) => parse_template_auto(s.as_bytes())?,
        (Value::Object(_), None | Some(TemplateFormat::Json)) => {
            parse_template_json(req.template.to_string().as_bytes())?
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                "template must be a string or a JSON template object",
            ))
        }
    };
    let mode = req.mode.unwrap_or(state.config.default_mode);
    state.gateway(mode)?;
    let session = GenerationSession::start(
        template,
        &req.initial_prompt,
        SessionOptions {
            session_id: None,
            prompts: state.config.prompts.clone(),
            limits: state.config.limits,
            intervention_cap: state.config.intervention_cap,
        },
    );
    let now = Utc::now();
    let total_sections = session.sections().len();
    let inner = SlotInner {
        session,
        meta: SessionMeta {
            mode,
            created_at: now,
            updated_at: now,
        },
        events: Vec::new(),
    };
    let slot = state.store.insert(inner).await;
    let mut inner = slot.inner.lock().await;
    state
        .commit(
            &slot,
            &mut inner,
            None,
            vec![EventPayload::Notice(Notice::SessionCreated {
                total_sections,
            })],
        )
        .await?;
    tracing::info!(session = inner.session.session_id(), %mode, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionSummary::of(&inner.session, &inner.meta)),
    ))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let mut out = Vec::new();
    for slot in state.store.all().await {
        let inner = slot.inner.lock().await;
        out.push(SessionSummary::of(&inner.session, &inner.meta));
    }
    out.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
    Json(out)
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    let slot = state.slot(&id).await?;
    let inner = slot.inner.lock().await;
    Ok(Json(SessionSummary::of(&inner.session, &inner.meta)))
}

async fn get_state(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id).await?;
    let inner = slot.inner.lock().await;
    let session = &inner.session;
    let sections = session
        .template()
        .sections
        .iter()
        .zip(session.sections())
        .map(|(tpl, st)| SectionView {
            section_id: st.section_id.clone(),
            kind: tpl.kind,
            template_text: tpl.content.clone(),
            status: st.status,
            missing: st.missing.clone(),
            output_text: st.output_text.clone(),
            interventions: st.interventions,
        })
        .collect();
    Ok(Json(SessionView {
        summary: SessionSummary::of(session, &inner.meta),
        sections,
        accumulated: session.accumulated().entries().to_vec(),
        accumulated_text: session.render_accumulated(),
    }))
}

async fn advance(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AdvanceQuery>,
) -> Result<Json<StepEvent>, ApiError> {
    let slot = state.slot(&id).await?;
    let mut inner = slot.inner.lock().await;
    let gateway = state.gateway(inner.meta.mode)?;
    let mut session = inner.session.clone();
    let auto = q.auto;
    let (session, events, result) = tokio::task::spawn_blocking(move || {
        let mut events = Vec::new();
        let result = loop {
            match session.step(&*gateway) {
                Ok(ev) => {
                    events.push(ev.clone());
                    let pause = matches!(
                        ev,
                        StepEvent::InterventionRequired { .. } | StepEvent::Completed
                    );
                    if !auto || pause {
                        break Ok(ev);
                    }
                }
                Err(e) => break Err(e),
            }
        };
        (session, events, result)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;

    let mut payloads: Vec<EventPayload> = events.into_iter().map(EventPayload::Step).collect();
    if let Err(e) = &result {
        if !matches!(e, SessionError::SessionDone | SessionError::State(_)) {
            tracing::warn!(session = %id, error = %e, "step failed");
            payloads.push(EventPayload::Notice(Notice::StepFailed {
                section_id: session.current().map(|s| s.section_id.clone()),
                error: e.to_string(),
            }));
        }
    }
    state
        .commit(&slot, &mut inner, Some(session), payloads)
        .await?;
    Ok(Json(result?))
}

async fn intervene(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<InterventionRequest>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let Json(req) = body?;
    let slot = state.slot(&id).await?;
    let mut inner = slot.inner.lock().await;
    let mut session = inner.session.clone();
    let section_id = session
        .current()
        .map(|s| s.section_id.clone())
        .unwrap_or_default();
    session.provide_intervention(&req.text)?;
    let notice = Notice::InterventionAnswered {
        section_id,
        declined: req.text.trim().is_empty(),
    };
    state
        .commit(
            &slot,
            &mut inner,
            Some(session),
            vec![EventPayload::Notice(notice)],
        )
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn skip(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<StatusCode, ApiError> {
    let slot = state.slot(&id).await?;
    let mut inner = slot.inner.lock().await;
    let mut session = inner.session.clone();
    let section_id = session.skip_section()?;
    state
        .commit(
            &slot,
            &mut inner,
            Some(session),
            vec![EventPayload::Notice(Notice::SectionSkipped { section_id })],
        )
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn document(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DocumentQuery>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).await?;
    let inner = slot.inner.lock().await;
    let doc: OutputDocument = inner.session.assemble_document()?;
    Ok(match q.format.as_deref() {
        Some("text") => (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            doc.to_plain_text(),
        )
            .into_response(),
        Some("json") | None => Json(doc).into_response(),
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("unknown format {other:?}"),
            ))
        }
    })
}

async fn stream_events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).await?;
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let after = last_event_id.or(q.after).unwrap_or(0);
    let frames = events::frame_stream(slot, after).await;
    Ok(events::sse(frames).into_response())
}
