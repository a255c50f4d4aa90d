use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::response::sse::{Event, KeepAlive, Sse};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::{self, error::RecvError};

use super::store::SessionSlot;
use crate::session::StepEvent;

/// State changes that are not step results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notice {
    SessionCreated {
        total_sections: usize,
    },
    InterventionAnswered {
        section_id: String,
        declined: bool,
    },
    SectionSkipped {
        section_id: String,
    },
    StepFailed {
        section_id: Option<String>,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventPayload {
    Step(StepEvent),
    Notice(Notice),
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::Step(StepEvent::SectionGenerated { .. }) => "section_generated",
            EventPayload::Step(StepEvent::InterventionRequired { .. }) => "intervention_required",
            EventPayload::Step(StepEvent::SectionCarried { .. }) => "section_carried",
            EventPayload::Step(StepEvent::Completed) => "completed",
            EventPayload::Notice(Notice::SessionCreated { .. }) => "session_created",
            EventPayload::Notice(Notice::InterventionAnswered { .. }) => "intervention_answered",
            EventPayload::Notice(Notice::SectionSkipped { .. }) => "section_skipped",
            EventPayload::Notice(Notice::StepFailed { .. }) => "step_failed",
        }
    }
}

/// One entry of a session's event log. Sequences start at 1 and have no
/// gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFrame {
    pub sequence: u64,
    pub payload: EventPayload,
}

impl EventFrame {
    fn to_sse(&self) -> Event {
        Event::default()
            .id(self.sequence.to_string())
            .event(self.payload.kind())
            .data(serde_json::to_string(self).expect("frame serializes"))
    }
}

struct Cursor {
    rx: broadcast::Receiver<EventFrame>,
    slot: Arc<SessionSlot>,
    last: u64,
    pending: VecDeque<EventFrame>,
}

/// Frames after `after` from the stored log, then live frames as they are
/// published. A lagging receiver refills from the log so no sequence is
/// skipped.
pub(crate) async fn frame_stream(
    slot: Arc<SessionSlot>,
    after: u64,
) -> impl Stream<Item = EventFrame> + Send + 'static {
    let (backlog, rx) = {
        let inner = slot.inner.lock().await;
        let rx = slot.events_tx.subscribe();
        let backlog: VecDeque<EventFrame> = inner
            .events
            .iter()
            .filter(|f| f.sequence > after)
            .cloned()
            .collect();
        (backlog, rx)
    };
    let cursor = Cursor {
        rx,
        slot,
        last: after,
        pending: backlog,
    };
    stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(frame) = c.pending.pop_front() {
                if frame.sequence > c.last {
                    c.last = frame.sequence;
                    return Some((frame, c));
                }
                continue;
            }
            match c.rx.recv().await {
                Ok(frame) => c.pending.push_back(frame),
                Err(RecvError::Lagged(_)) => {
                    let inner = c.slot.inner.lock().await;
                    c.pending = inner
                        .events
                        .iter()
                        .filter(|f| f.sequence > c.last)
                        .cloned()
                        .collect();
                }
                Err(RecvError::Closed) => return None,
            }
        }
    })
}

pub(crate) fn sse(
    frames: impl Stream<Item = EventFrame> + Send + 'static,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    Sse::new(frames.map(|f| Ok(f.to_sse())))
        .keep_alive(KeepAlive::default().interval(Duration::from_secs(15)))
}
