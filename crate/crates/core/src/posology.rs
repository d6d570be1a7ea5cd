//! Posology entity extraction: the dose, frequency, duration and comment
//! matchers applied to a posology sentence.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::normalize::Sentence;
use crate::pattern::{find_all_with, MatchSpan, PatternLabel, PatternSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PosologyKind {
    Dose,
    Frequency,
    Duration,
    Comment,
}

impl PosologyKind {
    pub const ALL: [PosologyKind; 4] = [Self::Dose, Self::Frequency, Self::Duration, Self::Comment];

    pub fn from_label(label: PatternLabel) -> Option<Self> {
        match label {
            PatternLabel::Dose => Some(Self::Dose),
            PatternLabel::Frequency => Some(Self::Frequency),
            PatternLabel::Duration => Some(Self::Duration),
            PatternLabel::Comment => Some(Self::Comment),
            PatternLabel::DrugTrigger => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dose => "DOSE",
            Self::Frequency => "FREQUENCY",
            Self::Duration => "DURATION",
            Self::Comment => "COMMENT",
        }
    }
}

impl fmt::Display for PosologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosologyEntity {
    pub kind: PosologyKind,
    pub text: String,
    pub span: MatchSpan,
    pub sentence_line_id: String,
    /// Char offsets into the sentence's `match_text`.
    pub start: usize,
    pub end: usize,
    /// Char offsets into the raw line text.
    pub src_start: usize,
    pub src_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosologyExtraction {
    pub line_id: String,
    pub entities: Vec<PosologyEntity>,
    pub residual_text: String,
}

impl PosologyExtraction {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

pub fn extract_posology(sentence: &Sentence, patterns: &PatternSet) -> PosologyExtraction {
    let spans = find_all_with(patterns, sentence, |l| PosologyKind::from_label(l).is_some());
    let mut covered = vec![false; sentence.tokens.len()];
    let entities: Vec<PosologyEntity> = spans
        .into_iter()
        .map(|span| {
            covered[span.start_token..span.end_token].iter_mut().for_each(|c| *c = true);
            let first = &sentence.tokens[span.start_token];
            let last = &sentence.tokens[span.end_token - 1];
            PosologyEntity {
                kind: PosologyKind::from_label(span.label).expect("filtered to posology labels"),
                text: span.text.clone(),
                sentence_line_id: sentence.line_id.clone(),
                start: first.start,
                end: last.end,
                src_start: first.src_start,
                src_end: last.src_end,
                span,
            }
        })
        .collect();
    let residual_text = sentence
        .tokens
        .iter()
        .zip(&covered)
        .filter(|(_, &c)| !c)
        .map(|(t, _)| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    PosologyExtraction { line_id: sentence.line_id.clone(), entities, residual_text }
}
