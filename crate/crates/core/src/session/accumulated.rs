use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
    pub sequence: u64,
}

/// Append-only store of everything the user has told the engine. It is the
/// only data source the retrieval and generation agents see.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulatedPrompt {
    entries: Vec<PromptEntry>,
}

impl AccumulatedPrompt {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `text` and returns its sequence number. Empty text is not
    /// stored and yields `None`.
    pub fn append(
        &mut self,
        text: impl Into<String>,
        provenance: Provenance,
        section_id: Option<String>,
    ) -> Option<u64> {
        let text = text.into();
        if text.is_empty() {
            return None;
        }
        let sequence = self.entries.last().map_or(1, |e| e.sequence + 1);
        self.entries.push(PromptEntry {
            text,
            provenance,
            section_id,
            sequence,
        });
        Some(sequence)
    }

    pub fn entries(&self) -> &[PromptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rebuilds from stored entries, e.g. after loading a session file.
    /// Entries are put back in sequence order; duplicate or zero sequence
    /// numbers and empty texts are rejected.
    pub fn from_entries(mut entries: Vec<PromptEntry>) -> Result<Self, String> {
        entries.sort_by_key(|e| e.sequence);
        let mut last = 0;
        for e in &entries {
            if e.sequence <= last {
                return Err(format!("non-increasing prompt sequence {}", e.sequence));
            }
            if e.text.is_empty() {
                return Err(format!("prompt entry {} is empty", e.sequence));
            }
            last = e.sequence;
        }
        Ok(AccumulatedPrompt { entries })
    }

    /// Entry texts in sequence order, one per line.
    pub fn render(&self) -> String {
        render_accumulated(self)
    }
}

pub fn render_accumulated(accumulated: &AccumulatedPrompt) -> String {
    let mut ordered: Vec<&PromptEntry> = accumulated.entries.iter().collect();
    ordered.sort_by_key(|e| e.sequence);
    ordered
        .iter()
        .map(|e| e.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}
