//! Drug-name resolution against a local lexicon.
//!
//! A sentence is compared to lexicon names whose first token equals one of
//! the sentence's first three tokens. The window compared against a name
//! starts at that trigger token and spans as many tokens as the name, minus
//! trailing tokens that resemble no token of the name (typically a posology
//! written on the same line).

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{normalize_text, tokenize, Sentence};
use crate::similarity::similarity;

/// Default acceptance threshold on the similarity score.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Number of leading sentence tokens tried as name triggers.
pub const TRIGGER_TOKENS: usize = 3;
/// Trailing window tokens scoring below this against every name token are trimmed.
pub const WINDOW_TOKEN_FLOOR: f64 = 0.5;
/// Sentence tokens at least this long may fall back to fuzzy first-token lookup.
pub const FUZZY_MIN_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    File { path: String, source: io::Error },
    #[error("malformed lexicon: {0}")]
    Format(String),
    #[error("duplicate drug id {0}")]
    DuplicateId(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub drug_id: String,
    /// Name as written in the lexicon file.
    pub name: String,
    pub normalized: String,
}

/// A candidate returned by a [`CandidateSource`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub drug_id: String,
    pub name: String,
}

/// Where drug candidates come from. A remote drug database only has to
/// answer first-token lookups to plug into [`detect_drug`].
pub trait CandidateSource {
    /// Candidates whose normalized name starts with the token `first_token`.
    fn lookup_candidates(&self, first_token: &str) -> Vec<Candidate>;

    /// Index keys close to `token`, tried when the exact lookup is empty.
    fn near_keys(&self, _token: &str) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct DrugLexicon {
    entries: Vec<LexiconEntry>,
    by_first_token: BTreeMap<String, Vec<usize>>,
}

#[derive(Deserialize)]
struct LexiconRow {
    id: String,
    name: String,
}

fn first_token(normalized: &str) -> Option<String> {
    tokenize(normalized).into_iter().next().map(|t| t.text)
}

impl DrugLexicon {
    pub fn new(rows: impl IntoIterator<Item = (String, String)>) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        let mut ids = BTreeSet::new();
        let mut by_first_token: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (drug_id, name) in rows {
            let drug_id = drug_id.trim().to_string();
            if drug_id.is_empty() {
                return Err(LexiconError::Format("empty drug id".into()));
            }
            if !ids.insert(drug_id.clone()) {
                return Err(LexiconError::DuplicateId(drug_id));
            }
            let normalized = normalize_text(&name);
            let key = first_token(&normalized)
                .ok_or_else(|| LexiconError::Format(format!("drug {drug_id} has an empty name")))?;
            by_first_token.entry(key).or_default().push(entries.len());
            entries.push(LexiconEntry { drug_id, name: name.trim().to_string(), normalized });
        }
        if entries.is_empty() {
            return Err(LexiconError::EmptyLexicon);
        }
        Ok(Self { entries, by_first_token })
    }

    /// CSV with an `id,name` header.
    pub fn from_csv_str(text: &str) -> Result<Self, LexiconError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, row) in reader.deserialize::<LexiconRow>().enumerate() {
            let row = row.map_err(|e| LexiconError::Format(format!("row {}: {e}", i + 1)))?;
            rows.push((row.id, row.name));
        }
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LexiconError::File { path: path.display().to_string(), source })?;
        Self::from_csv_str(&text)
    }

    /// The bundled sample lexicon.
    pub fn french_sample() -> Self {
        Self::from_csv_str(crate::data::LEXICON_FR).expect("bundled lexicon is valid")
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, drug_id: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.drug_id == drug_id)
    }
}

impl CandidateSource for DrugLexicon {
    fn lookup_candidates(&self, first_token: &str) -> Vec<Candidate> {
        self.by_first_token
            .get(first_token)
            .into_iter()
            .flatten()
            .map(|&i| Candidate { drug_id: self.entries[i].drug_id.clone(), name: self.entries[i].name.clone() })
            .collect()
    }

    fn near_keys(&self, token: &str) -> Vec<String> {
        self.by_first_token
            .keys()
            .filter(|k| k.chars().count() >= FUZZY_MIN_LEN && strsim::levenshtein(k, token) <= 1)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugMention {
    pub line_id: String,
    pub drug_id: String,
    pub lexicon_name: String,
    /// Normalized window text that was scored.
    pub surface_text: String,
    pub score: f64,
    pub trigger_token_index: usize,
    /// Token range `[window_start, window_end)` of the scored window.
    pub window_start: usize,
    pub window_end: usize,
    /// Raw-text char range of the window.
    pub src_start: usize,
    pub src_end: usize,
}

struct Scored {
    score: f64,
    trigger: usize,
    name_len: usize,
    candidate: Candidate,
    end: usize,
    window: String,
}

impl Scored {
    /// Higher score, then earlier trigger, then longer name, then smaller id.
    fn beats(&self, other: &Scored) -> bool {
        self.score
            .total_cmp(&other.score)
            .then(other.trigger.cmp(&self.trigger))
            .then(self.name_len.cmp(&other.name_len))
            .then(other.candidate.drug_id.cmp(&self.candidate.drug_id))
            .is_gt()
    }
}

fn best_token_similarity(token: &str, name_tokens: &[String]) -> f64 {
    name_tokens.iter().map(|n| similarity(token, n)).fold(0.0, f64::max)
}

/// Best lexicon match among the first [`TRIGGER_TOKENS`] tokens, if its
/// score reaches `threshold`.
pub fn detect_drug(sentence: &Sentence, source: &dyn CandidateSource, threshold: f64) -> Option<DrugMention> {
    let n = sentence.tokens.len();
    let mut best: Option<Scored> = None;
    for trigger in 0..n.min(TRIGGER_TOKENS) {
        let token = &sentence.tokens[trigger].text;
        let mut candidates = source.lookup_candidates(token);
        if candidates.is_empty() && token.chars().count() >= FUZZY_MIN_LEN {
            for key in source.near_keys(token) {
                candidates.extend(source.lookup_candidates(&key));
            }
        }
        let mut seen = BTreeSet::new();
        for candidate in candidates {
            if !seen.insert(candidate.drug_id.clone()) {
                continue;
            }
            let normalized = normalize_text(&candidate.name);
            let name_tokens: Vec<String> = tokenize(&normalized).into_iter().map(|t| t.text).collect();
            let mut end = (trigger + name_tokens.len().max(1)).min(n);
            while end > trigger + 1
                && best_token_similarity(&sentence.tokens[end - 1].text, &name_tokens) < WINDOW_TOKEN_FLOOR
            {
                end -= 1;
            }
            let window = sentence.token_text(trigger, end);
            let scored = Scored {
                score: similarity(&normalized, &window),
                trigger,
                name_len: normalized.chars().count(),
                candidate,
                end,
                window,
            };
            if best.as_ref().is_none_or(|b| scored.beats(b)) {
                best = Some(scored);
            }
        }
    }
    let best = best.filter(|b| b.score >= threshold)?;
    let (src_start, src_end) = sentence.source_range(best.trigger, best.end);
    Some(DrugMention {
        line_id: sentence.line_id.clone(),
        drug_id: best.candidate.drug_id,
        lexicon_name: best.candidate.name,
        surface_text: best.window,
        score: best.score,
        trigger_token_index: best.trigger,
        window_start: best.trigger,
        window_end: best.end,
        src_start,
        src_end,
    })
}

/// The part of a drug line after the matched name, as its own sentence.
/// Empty when the name window reaches the end of the line.
pub fn split_combined_line(sentence: &Sentence, mention: &DrugMention) -> Sentence {
    sentence.suffix(mention.window_end)
}

/// Words that introduce an alternative to the drug written just above,
/// as in "ou equivalent".
#[derive(Debug, Clone)]
pub struct EquivalenceMarkers(Vec<Vec<String>>);

impl EquivalenceMarkers {
    pub fn parse(text: &str) -> Self {
        let mut markers: Vec<Vec<String>> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .map(|l| tokenize(&normalize_text(l)).into_iter().map(|t| t.text).collect::<Vec<_>>())
            .filter(|m| !m.is_empty())
            .collect();
        markers.sort();
        markers.dedup();
        Self(markers)
    }

    pub fn french() -> Self {
        Self::parse(crate::data::EQUIVALENCE_MARKERS_FR)
    }

    /// Whether the sentence opens with one of the markers.
    pub fn starts_sentence(&self, sentence: &Sentence) -> bool {
        self.0.iter().any(|m| {
            m.len() <= sentence.tokens.len() && m.iter().zip(&sentence.tokens).all(|(w, t)| *w == t.text)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::Stopwords;

    fn lexicon() -> DrugLexicon {
        DrugLexicon::from_csv_str(
            "id,name\n\
             D1,\"DOLIPRANE 1000 mg, comprimé\"\n\
             D2,\"DOLIPRANE 500 mg, gélule\"\n\
             D3,\"SPASFON 80 mg, comprimé enrobé\"\n\
             D4,\"AMOXICILLINE BIOGARAN 1 g, comprimé dispersible\"\n",
        )
        .unwrap()
    }

    fn sentence(text: &str) -> Sentence {
        Sentence::detached(text, &Stopwords::french()).unwrap()
    }

    #[test]
    fn exact_name_scores_one() {
        let m = detect_drug(&sentence("DOLIPRANE 1000 mg, comprimé"), &lexicon(), 0.5).unwrap();
        assert_eq!(m.drug_id, "D1");
        assert_eq!(m.score, 1.0);
        assert_eq!((m.window_start, m.window_end), (0, 5));
    }

    #[test]
    fn strength_picks_the_right_entry() {
        let m = detect_drug(&sentence("Doliprane 500mg"), &lexicon(), 0.5).unwrap();
        assert_eq!(m.drug_id, "D2");
    }

    #[test]
    fn posology_tail_is_not_part_of_the_window() {
        let s = sentence("doliprane 1000 mg 1 cp le soir");
        let m = detect_drug(&s, &lexicon(), 0.5).unwrap();
        assert_eq!(m.drug_id, "D1");
        assert_eq!(m.surface_text, "doliprane 1000 mg");
        let rest = split_combined_line(&s, &m);
        assert_eq!(rest.match_text, "1 cp le soir");
        assert_eq!(rest.tokens[0].src_start, 18);
    }

    #[test]
    fn trigger_may_follow_a_list_marker() {
        let m = detect_drug(&sentence("1) SPASFON 80 mg"), &lexicon(), 0.5).unwrap();
        assert_eq!((m.drug_id.as_str(), m.trigger_token_index), ("D3", 2));
        assert_eq!(detect_drug(&sentence("a b c SPASFON 80 mg"), &lexicon(), 0.0), None);
    }

    #[test]
    fn one_typo_in_the_first_token_is_tolerated() {
        let m = detect_drug(&sentence("SPASF0N 80 mg"), &lexicon(), 0.5).unwrap();
        assert_eq!(m.drug_id, "D3");
        assert!(m.score < 1.0);
    }

    #[test]
    fn threshold_is_applied_after_selection() {
        let s = sentence("amoxicilline");
        let m = detect_drug(&s, &lexicon(), 0.0).unwrap();
        assert!(detect_drug(&s, &lexicon(), m.score).is_some());
        assert!(detect_drug(&s, &lexicon(), m.score + 1e-9).is_none());
    }

    #[test]
    fn lexicon_errors() {
        assert!(matches!(DrugLexicon::from_csv_str("id,name\n"), Err(LexiconError::EmptyLexicon)));
        assert!(matches!(
            DrugLexicon::from_csv_str("id,name\nA,x y\nA,z\n"),
            Err(LexiconError::DuplicateId(id)) if id == "A"
        ));
        assert!(matches!(DrugLexicon::from_path(Path::new("/nonexistent/lex.csv")), Err(LexiconError::File { .. })));
        assert!(DrugLexicon::from_csv_str("id,name\nA,\"  \"\n").is_err());
    }

    #[test]
    fn sample_lexicon_loads() {
        let lex = DrugLexicon::french_sample();
        assert!(lex.len() >= 200);
        assert!(lex.lookup_candidates("doliprane").len() >= 3);
    }

    #[test]
    fn equivalence_markers() {
        let m = EquivalenceMarkers::french();
        assert!(m.starts_sentence(&sentence("ou équivalent")));
        assert!(m.starts_sentence(&sentence("ou DAFALGAN 1 g")));
        assert!(!m.starts_sentence(&sentence("doliprane ou dafalgan")));
    }
}
