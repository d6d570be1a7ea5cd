//! Attaches posology lines to drug lines from their position on the page.
//!
//! For each posology line, in reading order:
//!
//! 1. a drug line on the same page whose vertical band overlaps the line
//!    (horizontally aligned) takes it, the horizontally nearest one first;
//! 2. otherwise the nearest drug line above takes it, provided the vertical
//!    gap from the last line already in that drug's section stays within
//!    `drug_gap_factor` median line heights (when the section is just the
//!    drug) or `section_gap_factor` (when it already holds a posology);
//! 3. otherwise the line is an orphan.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drug::DrugMention;
use crate::ocr::BoundingBox;
use crate::posology::PosologyExtraction;

/// Median line height assumed on pages with too few lines to measure one.
pub const FALLBACK_LINE_HEIGHT: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum RelationError {
    #[error("upper box starts at {upper_top}, below the lower box at {lower_top}")]
    Order { upper_top: f64, lower_top: f64 },
    #[error("invalid record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub drug_gap_factor: f64,
    pub section_gap_factor: f64,
    /// Minimum vertical overlap, as a fraction of the shorter line height,
    /// for two lines to count as horizontally aligned.
    pub overlap_fraction: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { drug_gap_factor: 2.5, section_gap_factor: 1.5, overlap_fraction: 0.5 }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.drug_gap_factor, self.section_gap_factor, self.overlap_fraction];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.overlap_fraction > 1.0 {
            return Err(format!("invalid link config {self:?}"));
        }
        Ok(())
    }
}

/// Gap between the bottom of `upper` and the top of `lower`, zero when they
/// overlap.
pub fn vertical_gap(upper: &BoundingBox, lower: &BoundingBox) -> Result<f64, RelationError> {
    if upper.top > lower.top {
        return Err(RelationError::Order { upper_top: upper.top, lower_top: lower.top });
    }
    Ok((lower.top - upper.bottom()).max(0.0))
}

/// Whether the vertical extents overlap by at least `overlap_fraction` of
/// the shorter height.
pub fn horizontally_aligned(a: &BoundingBox, b: &BoundingBox, overlap_fraction: f64) -> bool {
    let overlap = a.bottom().min(b.bottom()) - a.top.max(b.top);
    overlap > 0.0 && overlap >= overlap_fraction * a.height.min(b.height)
}

fn horizontal_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    (b.left - a.right()).max(a.left - b.right()).max(0.0)
}

fn horizontal_overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    (a.right().min(b.right()) - a.left.max(b.left)).max(0.0)
}

/// One analyzed line fed to the linker.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLine {
    pub line_id: String,
    pub page: u32,
    pub bbox: BoundingBox,
    pub drug: Option<DrugMention>,
    /// Posology entities on this line. On a drug line these are the entities
    /// written after the drug name.
    pub posology: Option<PosologyExtraction>,
    /// A drug line whose name was not found in the lexicon.
    pub unmatched_drug: bool,
}

impl LinkLine {
    pub fn new(line_id: impl Into<String>, page: u32, bbox: BoundingBox) -> Self {
        Self { line_id: line_id.into(), page, bbox, drug: None, posology: None, unmatched_drug: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub kind: String,
    pub text: String,
    /// Char offsets into the raw OCR line text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosologyRecord {
    pub line_id: String,
    pub entities: Vec<EntityRecord>,
    pub residual: String,
}

impl From<&PosologyExtraction> for PosologyRecord {
    fn from(p: &PosologyExtraction) -> Self {
        Self {
            line_id: p.line_id.clone(),
            entities: p
                .entities
                .iter()
                .map(|e| EntityRecord { kind: e.kind.as_str().into(), text: e.text.clone(), start: e.src_start, end: e.src_end })
                .collect(),
            residual: p.residual_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugRecord {
    pub drug_id: String,
    pub name: String,
    pub surface: String,
    pub score: f64,
    pub line_id: String,
    pub posologies: Vec<PosologyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionRecord {
    pub doc_id: String,
    pub drugs: Vec<DrugRecord>,
    pub orphans: Vec<PosologyRecord>,
    pub unmatched_drug_lines: Vec<String>,
}

impl PrescriptionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records always serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, RelationError> {
        serde_json::from_str(json).map_err(|e| RelationError::Record(e.to_string()))
    }

    /// Line ids of every posology in the record, attached or orphaned.
    pub fn posology_line_ids(&self) -> Vec<&str> {
        self.drugs
            .iter()
            .flat_map(|d| &d.posologies)
            .chain(&self.orphans)
            .map(|p| p.line_id.as_str())
            .collect()
    }
}

fn reading_order(a: &LinkLine, b: &LinkLine) -> Ordering {
    a.page
        .cmp(&b.page)
        .then(a.bbox.top.total_cmp(&b.bbox.top))
        .then(a.bbox.left.total_cmp(&b.bbox.left))
        .then(a.line_id.cmp(&b.line_id))
}

fn median_heights(lines: &[&LinkLine]) -> BTreeMap<u32, f64> {
    let mut by_page: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for l in lines {
        by_page.entry(l.page).or_default().push(l.bbox.height);
    }
    by_page
        .into_iter()
        .map(|(page, mut h)| {
            if h.len() < 3 {
                return (page, FALLBACK_LINE_HEIGHT);
            }
            h.sort_by(f64::total_cmp);
            let n = h.len();
            let m = if n % 2 == 1 { h[n / 2] } else { (h[n / 2 - 1] + h[n / 2]) / 2.0 };
            (page, m)
        })
        .collect()
}

/// Builds the record. Input order does not matter.
pub fn link(doc_id: &str, lines: &[LinkLine], config: &LinkConfig) -> PrescriptionRecord {
    let mut lines: Vec<&LinkLine> = lines.iter().collect();
    lines.sort_by(|a, b| reading_order(a, b));
    let heights = median_heights(&lines);

    let drugs: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].drug.is_some()).collect();
    let mut attached: Vec<Vec<PosologyRecord>> = drugs
        .iter()
        .map(|&i| lines[i].posology.as_ref().map(PosologyRecord::from).into_iter().collect())
        .collect();
    // Last line of each drug's section and whether it is the drug line itself.
    let mut section_end: Vec<(BoundingBox, bool)> = drugs.iter().map(|&i| (lines[i].bbox, true)).collect();
    let mut orphans = Vec::new();

    for line in &lines {
        let Some(posology) = line.drug.is_none().then_some(line.posology.as_ref()).flatten() else {
            continue;
        };
        let same_page = || drugs.iter().enumerate().filter(|(_, &d)| lines[d].page == line.page);

        let aligned = same_page()
            .filter(|(_, &d)| horizontally_aligned(&lines[d].bbox, &line.bbox, config.overlap_fraction))
            .min_by(|(_, &a), (_, &b)| {
                horizontal_distance(&lines[a].bbox, &line.bbox)
                    .total_cmp(&horizontal_distance(&lines[b].bbox, &line.bbox))
                    .then(a.cmp(&b))
            })
            .map(|(k, _)| k);
        if let Some(k) = aligned {
            attached[k].push(posology.into());
            continue;
        }

        let above = same_page()
            .filter_map(|(k, &d)| vertical_gap(&lines[d].bbox, &line.bbox).ok().map(|g| (k, d, g)))
            .min_by(|a, b| {
                a.2.total_cmp(&b.2)
                    .then(
                        horizontal_overlap(&lines[b.1].bbox, &line.bbox)
                            .total_cmp(&horizontal_overlap(&lines[a.1].bbox, &line.bbox)),
                    )
                    .then(a.1.cmp(&b.1))
            });
        let median = heights.get(&line.page).copied().unwrap_or(FALLBACK_LINE_HEIGHT);
        let accepted = above.and_then(|(k, _, _)| {
            let (prev, is_drug) = section_end[k];
            let factor = if is_drug { config.drug_gap_factor } else { config.section_gap_factor };
            let gap = vertical_gap(&prev, &line.bbox).unwrap_or(f64::INFINITY);
            (gap <= factor * median).then_some(k)
        });
        match accepted {
            Some(k) => {
                attached[k].push(posology.into());
                section_end[k] = (line.bbox, false);
            }
            None => orphans.push(posology.into()),
        }
    }

    let drugs = drugs
        .iter()
        .zip(attached)
        .map(|(&i, posologies)| {
            let m = lines[i].drug.as_ref().expect("drug line");
            DrugRecord {
                drug_id: m.drug_id.clone(),
                name: m.lexicon_name.clone(),
                surface: m.surface_text.clone(),
                score: m.score,
                line_id: lines[i].line_id.clone(),
                posologies,
            }
        })
        .collect();
    let unmatched_drug_lines =
        lines.iter().filter(|l| l.unmatched_drug && l.drug.is_none()).map(|l| l.line_id.clone()).collect();
    PrescriptionRecord { doc_id: doc_id.to_string(), drugs, orphans, unmatched_drug_lines }
}
