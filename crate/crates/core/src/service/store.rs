//! In-memory session registry backed by a data directory. Each session has
//! three files: `<id>.session.json` (the engine's session file),
//! `<id>.meta.json` and the append-only `<id>.events.ndjson`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, RwLock};

use super::events::EventFrame;
use crate::gateway::ExchangeMode;
use crate::session::{load_session, save_session, GenerationSession};

const EVENT_CHANNEL_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub mode: ExchangeMode,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

pub(crate) struct SlotInner {
    pub session: GenerationSession,
    pub meta: SessionMeta,
    pub events: Vec<EventFrame>,
}

pub(crate) struct SessionSlot {
    pub inner: Mutex<SlotInner>,
    pub events_tx: broadcast::Sender<EventFrame>,
}

impl SessionSlot {
    fn new(inner: SlotInner) -> Self {
        let (events_tx, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        SessionSlot {
            inner: Mutex::new(inner),
            events_tx,
        }
    }
}

pub(crate) struct SessionStore {
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

/// What has to be written after a state change.
pub(crate) struct PersistJob {
    pub session_id: String,
    pub session: Vec<u8>,
    pub meta: Vec<u8>,
    pub new_events: Vec<u8>,
}

impl PersistJob {
    pub fn new(inner: &SlotInner, new_frames: &[EventFrame]) -> Self {
        let mut new_events = Vec::new();
        for f in new_frames {
            serde_json::to_writer(&mut new_events, f).expect("frame serializes");
            new_events.push(b'\n');
        }
        PersistJob {
            session_id: inner.session.session_id().to_string(),
            session: save_session(&inner.session),
            meta: serde_json::to_vec_pretty(&inner.meta).expect("meta serializes"),
            new_events,
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            data_dir: None,
            sessions: RwLock::default(),
        }
    }

    /// Opens `dir`, creating it if needed, and loads every stored session.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".session.json"))
            else {
                continue;
            };
            match Self::load_one(dir, id) {
                Ok(inner) => {
                    sessions.insert(id.to_string(), Arc::new(SessionSlot::new(inner)));
                }
                Err(e) => tracing::warn!(session = id, error = %e, "skipping unreadable session"),
            }
        }
        Ok(SessionStore {
            data_dir: Some(dir.to_path_buf()),
            sessions: RwLock::new(sessions),
        })
    }

    fn load_one(dir: &Path, id: &str) -> Result<SlotInner, String> {
        let session_bytes =
            std::fs::read(dir.join(format!("{id}.session.json"))).map_err(|e| e.to_string())?;
        let session = load_session(&session_bytes).map_err(|e| e.to_string())?;
        let meta: SessionMeta = std::fs::read(dir.join(format!("{id}.meta.json")))
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))?;
        let events = match std::fs::read_to_string(dir.join(format!("{id}.events.ndjson"))) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<EventFrame>, _>>()
                .map_err(|e| e.to_string())?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.to_string()),
        };
        Ok(SlotInner {
            session,
            meta,
            events,
        })
    }

    pub async fn insert(&self, inner: SlotInner) -> Arc<SessionSlot> {
        let id = inner.session.session_id().to_string();
        let slot = Arc::new(SessionSlot::new(inner));
        self.sessions.write().await.insert(id, slot.clone());
        slot
    }

    pub async fn get(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.read().await.get(id).cloned()
    }

    pub async fn all(&self) -> Vec<Arc<SessionSlot>> {
        self.sessions.read().await.values().cloned().collect()
    }

    /// Writes the session and meta files atomically and appends new frames
    /// to the event log.
    pub async fn persist(&self, job: PersistJob) -> std::io::Result<()> {
        let Some(dir) = self.data_dir.clone() else {
            return Ok(());
        };
        tokio::task::spawn_blocking(move || {
            let id = &job.session_id;
            write_atomic(&dir.join(format!("{id}.session.json")), &job.session)?;
            write_atomic(&dir.join(format!("{id}.meta.json")), &job.meta)?;
            if !job.new_events.is_empty() {
                let mut log = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(format!("{id}.events.ndjson")))?;
                log.write_all(&job.new_events)?;
                log.sync_data()?;
            }
            Ok(())
        })
        .await
        .map_err(std::io::Error::other)?
    }
}
