//! Section-level template representation and the two input formats that
//! produce it: a JSON layout export and a plain-text delimiter format.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Line that separates sections in the plain-text format.
pub const PLAINTEXT_DELIMITER: &str = "---";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },
}

impl TemplateError {
    fn schema(field: &str, message: impl Into<String>) -> Self {
        TemplateError::Schema {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Text,
    Figure,
    Table,
}

impl SectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::Text => "text",
            SectionKind::Figure => "figure",
            SectionKind::Table => "table",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(SectionKind::Text),
            "figure" => Some(SectionKind::Figure),
            "table" => Some(SectionKind::Table),
            _ => None,
        }
    }
}

/// Axis-aligned box in page coordinates, `x0 <= x1` and `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(a: [f64; 4]) -> Self {
        BoundingBox {
            x0: a[0],
            y0: a[1],
            x1: a[2],
            y1: a[3],
        }
    }
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, TemplateError> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        if ![self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(TemplateError::schema("bbox", "coordinates must be finite"));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(TemplateError::schema(
                "bbox",
                "expected x0 <= x1 and y0 <= y1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSection {
    pub id: String,
    pub kind: SectionKind,
    #[serde(default)]
    pub content: String,
    pub page: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl TemplateSection {
    /// A text section on page 0 without layout information.
    pub fn text(id: impl Into<String>, content: impl Into<String>) -> Self {
        TemplateSection {
            id: id.into(),
            kind: SectionKind::Text,
            content: content.into(),
            page: 0,
            bbox: None,
        }
    }

    pub fn is_text(&self) -> bool {
        self.kind == SectionKind::Text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub sections: Vec<TemplateSection>,
}

impl TemplateDocument {
    /// Validates the section invariants and stores the sections in reading
    /// order.
    pub fn new(
        title: Option<String>,
        sections: Vec<TemplateSection>,
    ) -> Result<Self, TemplateError> {
        if sections.is_empty() {
            return Err(TemplateError::schema(
                "sections",
                "at least one section is required",
            ));
        }
        let mut seen = HashSet::new();
        for s in &sections {
            if s.id.is_empty() {
                return Err(TemplateError::schema("id", "section id must not be empty"));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(TemplateError::schema(
                    "id",
                    format!("duplicate section id {:?}", s.id),
                ));
            }
            if !s.is_text() && !s.content.is_empty() {
                return Err(TemplateError::schema(
                    "content",
                    format!(
                        "{} section {:?} must not carry content",
                        s.kind.as_str(),
                        s.id
                    ),
                ));
            }
            if let Some(b) = &s.bbox {
                b.validate()?;
            }
        }
        Ok(TemplateDocument {
            title,
            sections: reading_order(sections),
        })
    }

    pub fn section(&self, id: &str) -> Option<&TemplateSection> {
        self.sections.iter().find(|s| s.id == id)
    }

    /// Serializes to the template JSON schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serialization is infallible")
    }

    /// Serializes the text sections to the plain-text delimiter format.
    /// Non-text sections and layout hints are not representable there.
    pub fn to_plaintext(&self) -> String {
        self.sections
            .iter()
            .filter(|s| s.is_text())
            .map(|s| s.content.as_str())
            .collect::<Vec<_>>()
            .join("\n---\n")
    }
}

/// Sorts sections top-to-bottom, left-to-right within each page. Sections
/// without a bounding box follow the boxed sections of their page in input
/// order.
pub fn reading_order(mut sections: Vec<TemplateSection>) -> Vec<TemplateSection> {
    sections.sort_by(compare_reading_position);
    sections
}

fn compare_reading_position(a: &TemplateSection, b: &TemplateSection) -> Ordering {
    a.page.cmp(&b.page).then_with(|| match (&a.bbox, &b.bbox) {
        (Some(x), Some(y)) => x.y0.total_cmp(&y.y0).then(x.x0.total_cmp(&y.x0)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    })
}

/// Parses a template from the JSON schema. Unknown top-level keys are
/// ignored; unknown section keys are rejected.
pub fn parse_template_json(bytes: &[u8]) -> Result<TemplateDocument, TemplateError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| TemplateError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let root = value
        .as_object()
        .ok_or_else(|| TemplateError::schema("$", "expected a JSON object"))?;

    let title = match root.get("title") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(TemplateError::schema("title", "expected a string")),
    };
    let raw_sections = root
        .get("sections")
        .ok_or_else(|| TemplateError::schema("sections", "missing"))?
        .as_array()
        .ok_or_else(|| TemplateError::schema("sections", "expected an array"))?;

    let sections = raw_sections
        .iter()
        .map(|v| {
            v.as_object()
                .ok_or_else(|| TemplateError::schema("sections", "each section must be an object"))
                .and_then(section_from_json)
        })
        .collect::<Result<Vec<_>, _>>()?;

    TemplateDocument::new(title, sections)
}

fn section_from_json(obj: &Map<String, Value>) -> Result<TemplateSection, TemplateError> {
    const KNOWN: [&str; 5] = ["id", "kind", "content", "page", "bbox"];
    if let Some(extra) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(TemplateError::schema(extra, "unknown section field"));
    }

    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(TemplateError::schema("id", "expected a string")),
        None => return Err(TemplateError::schema("id", "missing")),
    };
    let kind = match obj.get("kind") {
        Some(Value::String(s)) => SectionKind::parse(s)
            .ok_or_else(|| TemplateError::schema("kind", format!("unknown kind {s:?}")))?,
        Some(_) => return Err(TemplateError::schema("kind", "expected a string")),
        None => return Err(TemplateError::schema("kind", "missing")),
    };
    let content = match obj.get("content") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => String::new(),
        Some(_) => return Err(TemplateError::schema("content", "expected a string")),
    };
    let page = match obj.get("page") {
        Some(Value::Number(n)) => n
            .as_u64()
            .and_then(|p| u32::try_from(p).ok())
            .ok_or_else(|| TemplateError::schema("page", "expected a non-negative integer"))?,
        Some(_) => {
            return Err(TemplateError::schema(
                "page",
                "expected a non-negative integer",
            ))
        }
        None => return Err(TemplateError::schema("page", "missing")),
    };
    let bbox = match obj.get("bbox") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) if items.len() == 4 => {
            let mut coords = [0.0f64; 4];
            for (slot, item) in coords.iter_mut().zip(items) {
                *slot = item
                    .as_f64()
                    .ok_or_else(|| TemplateError::schema("bbox", "expected numbers"))?;
            }
            Some(BoundingBox::new(
                coords[0], coords[1], coords[2], coords[3],
            )?)
        }
        Some(_) => {
            return Err(TemplateError::schema(
                "bbox",
                "expected an array of 4 numbers",
            ))
        }
    };

    Ok(TemplateSection {
        id,
        kind,
        content,
        page,
        bbox,
    })
}

// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .split_inclusive(|b| *b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum::<usize>();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

/// Parses the plain-text format: sections separated by lines that are
/// exactly `---` once trailing whitespace is removed.
pub fn parse_plaintext_template(text: &str) -> Result<TemplateDocument, TemplateError> {
    let mut segments: Vec<String> = Vec::new();
    let mut current = String::new();
    for line in text.split_inclusive('\n') {
        if line.trim_end() == PLAINTEXT_DELIMITER {
            segments.push(std::mem::take(&mut current));
        } else {
            current.push_str(line);
        }
    }
    segments.push(current);

    let sections: Vec<TemplateSection> = segments
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .enumerate()
        .map(|(i, s)| TemplateSection::text(format!("s{}", i + 1), s))
        .collect();

    if sections.is_empty() {
        return Err(TemplateError::Parse {
            offset: 0,
            message: "no sections".to_string(),
        });
    }
    TemplateDocument::new(None, sections)
}

/// Picks the parser from the content: JSON when the first non-blank byte is
/// `{`, plain text otherwise.
pub fn parse_template_auto(bytes: &[u8]) -> Result<TemplateDocument, TemplateError> {
    let looks_json = bytes
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|b| *b == b'{');
    if looks_json {
        parse_template_json(bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| TemplateError::Parse {
            offset: e.valid_up_to(),
            message: "template is not valid UTF-8".to_string(),
        })?;
        parse_plaintext_template(text)
    }
}
