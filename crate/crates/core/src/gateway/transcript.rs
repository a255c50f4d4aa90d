//! Transcript files: one JSON header line followed by one exchange record
//! per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatExchange;

pub const TRANSCRIPT_FORMAT: &str = "semdoc-transcript";
const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub exchanges: Vec<ChatExchange>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    session_id: String,
}

pub fn record_transcript(session_id: &str, exchanges: &[ChatExchange]) -> Vec<u8> {
    let mut out = serde_json::to_vec(&Header {
        format: TRANSCRIPT_FORMAT.to_string(),
        version: TRANSCRIPT_VERSION,
        session_id: session_id.to_string(),
    })
    .expect("header serializes");
    out.push(b'\n');
    for ex in exchanges {
        serde_json::to_writer(&mut out, ex).expect("exchange serializes");
        out.push(b'\n');
    }
    out
}

pub fn load_transcript(bytes: &[u8]) -> Result<Transcript, TranscriptError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TranscriptError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TranscriptError::Parse {
        line: 1,
        message: "missing header".to_string(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| TranscriptError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != TRANSCRIPT_FORMAT || header.version != TRANSCRIPT_VERSION {
        return Err(TranscriptError::Parse {
            line: 1,
            message: format!(
                "unsupported transcript {} v{}",
                header.format, header.version
            ),
        });
    }
    let exchanges = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TranscriptError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<ChatExchange>, _>>()?;
    Ok(Transcript {
        session_id: header.session_id,
        exchanges,
    })
}
