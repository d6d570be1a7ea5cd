//! OCR layout ingestion.
//!
//! The input is a minimal line/word layout in the spirit of a Textract
//! response: every line carries its text and an axis-aligned bounding box
//! expressed in page-relative fractions.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on geometry bounds before a value is rejected.
pub const GEOMETRY_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("geometry error on {location}: {reason}")]
    Geometry { location: String, reason: String },
    #[error("document has no lines")]
    EmptyDocument,
}

/// Axis-aligned box in page-relative fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self { left, top, width, height }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    /// Checks the box against the page bounds, snapping values that sit
    /// within [`GEOMETRY_EPSILON`] of a bound back onto it.
    pub fn validated(self, location: &str) -> Result<Self, OcrError> {
        let fail = |reason: String| OcrError::Geometry { location: location.to_string(), reason };
        let fields = [
            ("left", self.left),
            ("top", self.top),
            ("width", self.width),
            ("height", self.height),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(fail(format!("{name} is not finite")));
            }
            if !(-GEOMETRY_EPSILON..=1.0 + GEOMETRY_EPSILON).contains(&v) {
                return Err(fail(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(fail(format!(
                "non-positive extent (width {}, height {})",
                self.width, self.height
            )));
        }
        if self.right() > 1.0 + GEOMETRY_EPSILON || self.bottom() > 1.0 + GEOMETRY_EPSILON {
            return Err(fail("box extends past the page edge".to_string()));
        }
        let left = self.left.clamp(0.0, 1.0);
        let top = self.top.clamp(0.0, 1.0);
        let width = self.width.min(1.0 - left);
        let height = self.height.min(1.0 - top);
        if width <= 0.0 || height <= 0.0 {
            return Err(fail("box collapses after clamping".to_string()));
        }
        Ok(Self { left, top, width, height })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    pub text: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrLine {
    #[serde(rename = "id")]
    pub line_id: String,
    pub page: u32,
    #[serde(rename = "text")]
    pub raw_text: String,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub words: Vec<OcrWord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrDocument {
    pub doc_id: String,
    pub pages: u32,
    pub lines: Vec<OcrLine>,
}

/// Sort key placing lines in reading order: page, then top, then left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadingOrderKey {
    pub page: u32,
    pub top: f64,
    pub left: f64,
}

impl ReadingOrderKey {
    pub fn cmp_total(&self, other: &Self) -> Ordering {
        self.page
            .cmp(&other.page)
            .then(self.top.total_cmp(&other.top))
            .then(self.left.total_cmp(&other.left))
    }
}

pub fn reading_order_key(line: &OcrLine) -> ReadingOrderKey {
    ReadingOrderKey { page: line.page, top: line.bbox.top, left: line.bbox.left }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn validate_line(line: OcrLine, pages: u32) -> Result<OcrLine, OcrError> {
    let id = line.line_id.clone();
    if id.is_empty() {
        return Err(OcrError::Schema("line with empty id".into()));
    }
    if line.page == 0 || line.page > pages {
        return Err(OcrError::Schema(format!(
            "line {id}: page {} outside 1..={pages}",
            line.page
        )));
    }
    if line.raw_text.trim().is_empty() {
        return Err(OcrError::Schema(format!("line {id}: empty text")));
    }
    let bbox = line.bbox.validated(&format!("line {id}"))?;
    let mut words = Vec::with_capacity(line.words.len());
    for (i, w) in line.words.into_iter().enumerate() {
        let wb = w.bbox.validated(&format!("line {id} word {i}"))?;
        words.push(OcrWord { text: w.text, bbox: wb });
    }
    if !words.is_empty() {
        let joined = collapse_whitespace(
            &words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "),
        );
        if joined != collapse_whitespace(&line.raw_text) {
            return Err(OcrError::Schema(format!(
                "line {id}: words {joined:?} do not spell the line text"
            )));
        }
    }
    Ok(OcrLine { line_id: id, page: line.page, raw_text: line.raw_text, bbox, words })
}

/// Validates a deserialized document and puts its lines in reading order.
pub fn validate_document(doc: OcrDocument) -> Result<OcrDocument, OcrError> {
    if doc.pages == 0 {
        return Err(OcrError::Schema("pages must be positive".into()));
    }
    if doc.lines.is_empty() {
        return Err(OcrError::EmptyDocument);
    }
    let mut seen = HashSet::new();
    let mut lines = Vec::with_capacity(doc.lines.len());
    for line in doc.lines {
        if !seen.insert(line.line_id.clone()) {
            return Err(OcrError::Schema(format!("duplicate line id {}", line.line_id)));
        }
        lines.push(validate_line(line, doc.pages)?);
    }
    // `sort_by` is stable, so equal keys keep their input order.
    lines.sort_by(|a, b| reading_order_key(a).cmp_total(&reading_order_key(b)));
    Ok(OcrDocument { doc_id: doc.doc_id, pages: doc.pages, lines })
}

pub fn parse_ocr_document(bytes: &[u8]) -> Result<OcrDocument, OcrError> {
    let doc: OcrDocument =
        serde_json::from_slice(bytes).map_err(|e| OcrError::Schema(e.to_string()))?;
    validate_document(doc)
}

/// Serializes a document in the same schema [`parse_ocr_document`] reads.
pub fn to_json(doc: &OcrDocument) -> Vec<u8> {
    serde_json::to_vec(doc).expect("OCR documents always serialize")
}
