use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOrigin {
    Generated,
    Carried,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSlot {
    pub section_id: String,
    pub origin: SlotOrigin,
    pub text: String,
}

/// The generated document: one slot per generated or carried section, in
/// template reading order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDocument {
    pub title: Option<String>,
    pub slots: Vec<OutputSlot>,
}

impl OutputDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output document serializes")
    }

    /// Non-empty slot texts separated by blank lines. Carried figures have
    /// no text and are left out.
    pub fn to_plain_text(&self) -> String {
        self.slots
            .iter()
            .map(|s| s.text.as_str())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}
