//! Per-label precision, recall and F1 of predicted entity spans against
//! gold annotations.
//!
//! `ExactSpan` counts a prediction as correct only when label and char
//! offsets agree exactly. `Token` counts labeled tokens instead: a token of
//! the sentence carries label L when its raw-text range overlaps a span of L.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSentence, EntityKind, GoldSpan};
use crate::normalize::{normalize_mapped, tokenize};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("sentence {index}: texts differ ({gold:?} vs {predicted:?})")]
    TextMismatch { index: usize, gold: String, predicted: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalMode {
    ExactSpan,
    Token,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LabelScores {
    /// Precision and recall are 1 on an empty denominator; F1 is 0 when both
    /// precision and recall are 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_label: BTreeMap<EntityKind, LabelScores>,
    /// Micro-average over all labels.
    pub overall: LabelScores,
}

impl EvalReport {
    pub fn label(&self, kind: EntityKind) -> &LabelScores {
        &self.per_label[&kind]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Plain-text table with percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            EvalMode::ExactSpan => "exact span",
            EvalMode::Token => "token",
        };
        writeln!(out, "mode: {mode}").unwrap();
        writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "Label", "F-measure", "Precision", "Recall").unwrap();
        let rows = self.per_label.iter().map(|(k, s)| (k.as_str(), s)).chain([("ALL", &self.overall)]);
        for (name, s) in rows {
            writeln!(
                out,
                "{:<10} {:>9.2} {:>9.2} {:>9.2}",
                name,
                100.0 * s.f1,
                100.0 * s.precision,
                100.0 * s.recall
            )
            .unwrap();
        }
        out
    }
}

/// Raw-text char ranges of the sentence tokens.
pub fn token_ranges(text: &str) -> Vec<(usize, usize)> {
    let mapped = normalize_mapped(text);
    let len = text.chars().count();
    tokenize(&mapped.as_string())
        .into_iter()
        .map(|t| (mapped.origin[t.start], (mapped.origin[t.end - 1] + 1).min(len)))
        .collect()
}

/// `(label, start, end)` items; token mode uses `(label, i, i)`.
type ItemSet = BTreeSet<(EntityKind, usize, usize)>;

fn token_labels(ranges: &[(usize, usize)], spans: &[GoldSpan]) -> BTreeSet<(EntityKind, usize)> {
    let mut out = BTreeSet::new();
    for s in spans {
        for (i, &(a, b)) in ranges.iter().enumerate() {
            if a < s.end && s.start < b {
                out.insert((s.kind, i));
            }
        }
    }
    out
}

pub fn score(gold: &[AnnotatedSentence], predicted: &[AnnotatedSentence], mode: EvalMode) -> Result<EvalReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), predicted: predicted.len() });
    }
    let mut counts: BTreeMap<EntityKind, [usize; 3]> = EntityKind::ALL.iter().map(|&k| (k, [0; 3])).collect();
    for (index, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.text != p.text {
            return Err(EvalError::TextMismatch { index, gold: g.text.clone(), predicted: p.text.clone() });
        }
        let (gs, ps): (ItemSet, ItemSet) = match mode {
            EvalMode::ExactSpan => (
                g.spans.iter().map(|s| (s.kind, s.start, s.end)).collect(),
                p.spans.iter().map(|s| (s.kind, s.start, s.end)).collect(),
            ),
            EvalMode::Token => {
                let ranges = token_ranges(&g.text);
                let wrap = |set: BTreeSet<(EntityKind, usize)>| set.into_iter().map(|(k, i)| (k, i, i)).collect();
                (wrap(token_labels(&ranges, &g.spans)), wrap(token_labels(&ranges, &p.spans)))
            }
        };
        for item in gs.intersection(&ps) {
            counts.get_mut(&item.0).unwrap()[0] += 1;
        }
        for item in ps.difference(&gs) {
            counts.get_mut(&item.0).unwrap()[1] += 1;
        }
        for item in gs.difference(&ps) {
            counts.get_mut(&item.0).unwrap()[2] += 1;
        }
    }
    let per_label: BTreeMap<_, _> =
        counts.iter().map(|(&k, c)| (k, LabelScores::from_counts(c[0], c[1], c[2]))).collect();
    let sum = |i: usize| counts.values().map(|c| c[i]).sum::<usize>();
    let overall = LabelScores::from_counts(sum(0), sum(1), sum(2));
    Ok(EvalReport { mode, per_label, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassLabel;

    fn sent(text: &str, spans: &[(EntityKind, usize, usize)]) -> AnnotatedSentence {
        AnnotatedSentence {
            text: text.into(),
            label: ClassLabel::Posology,
            spans: spans.iter().map(|&(kind, start, end)| GoldSpan { kind, start, end }).collect(),
        }
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![sent("1 cp le soir", &[(EntityKind::Dose, 0, 4), (EntityKind::Frequency, 5, 12)])];
        for mode in [EvalMode::ExactSpan, EvalMode::Token] {
            let r = score(&g, &g, mode).unwrap();
            assert_eq!(r.label(EntityKind::Dose).f1, 1.0);
            assert_eq!(r.overall.f1, 1.0);
            assert_eq!(r.label(EntityKind::Drug), &LabelScores::from_counts(0, 0, 0));
        }
    }

    #[test]
    fn empty_denominators() {
        let s = LabelScores::from_counts(0, 0, 3);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 0.0, 0.0));
        let s = LabelScores::from_counts(0, 2, 0);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 1.0, 0.0));
        let s = LabelScores::from_counts(0, 2, 2);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn token_mode_gives_partial_credit() {
        let g = vec![sent("pendant 10 jours", &[(EntityKind::Duration, 0, 16)])];
        let p = vec![sent("pendant 10 jours", &[(EntityKind::Duration, 8, 16)])];
        let exact = score(&g, &p, EvalMode::ExactSpan).unwrap();
        assert_eq!(exact.label(EntityKind::Duration).tp, 0);
        let tok = score(&g, &p, EvalMode::Token).unwrap();
        let d = tok.label(EntityKind::Duration);
        assert_eq!((d.tp, d.fp, d.fn_), (2, 0, 1));
    }

    #[test]
    fn token_ranges_use_raw_offsets() {
        assert_eq!(token_ranges("Prendre 1 000 mg."), [(0, 7), (8, 13), (14, 16), (16, 17)]);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let g = vec![sent("a", &[])];
        assert_eq!(score(&g, &[], EvalMode::Token), Err(EvalError::LengthMismatch { gold: 1, predicted: 0 }));
        assert!(matches!(score(&g, &[sent("b", &[])], EvalMode::Token), Err(EvalError::TextMismatch { .. })));
    }

    #[test]
    fn table_has_the_expected_header() {
        let g = vec![sent("1 cp", &[(EntityKind::Dose, 0, 4)])];
        let t = score(&g, &g, EvalMode::Token).unwrap().to_table();
        assert!(t.contains("Label") && t.contains("F-measure") && t.contains("Precision") && t.contains("Recall"));
        assert!(t.contains("DOSE"));
    }
}
