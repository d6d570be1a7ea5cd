//! Declarative token patterns.
//!
//! A pattern is an ordered list of [`TokenSpec`]s, each a conjunction of
//! constraints on a single token plus a quantifier. Matching is greedy: at
//! every start position the longest span accepted by the spec sequence wins,
//! with backtracking so a greedy quantifier never starves the specs after it.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::normalize::{Sentence, Token};

/// Upper bound on repetitions for `+` and `*`.
pub const MAX_REPEAT: usize = 10;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("invalid pattern file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate pattern id {0:?}")]
    DuplicateId(String),
    #[error("pattern {0:?} has no token specs")]
    EmptyPattern(String),
    #[error("pattern {id:?} spec {index}: {reason}")]
    InvalidSpec { id: String, index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatternLabel {
    Dose,
    Frequency,
    Duration,
    Comment,
    DrugTrigger,
}

impl PatternLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dose => "DOSE",
            Self::Frequency => "FREQUENCY",
            Self::Duration => "DURATION",
            Self::Comment => "COMMENT",
            Self::DrugTrigger => "DRUG_TRIGGER",
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantifier {
    #[default]
    #[serde(rename = "1")]
    One,
    #[serde(rename = "?")]
    Opt,
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "*")]
    Star,
}

impl Quantifier {
    /// Inclusive repetition bounds.
    pub fn bounds(self) -> (usize, usize) {
        match self {
            Self::One => (1, 1),
            Self::Opt => (0, 1),
            Self::Plus => (1, MAX_REPEAT),
            Self::Star => (0, MAX_REPEAT),
        }
    }

    fn is_one(&self) -> bool {
        *self == Self::One
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LowerConstraint {
    Exact(String),
    OneOf(Vec<String>),
}

impl LowerConstraint {
    fn accepts(&self, lower: &str) -> bool {
        match self {
            Self::Exact(s) => s == lower,
            Self::OneOf(set) => set.iter().any(|s| s == lower),
        }
    }
}

/// A regex anchored to the whole token text.
#[derive(Clone)]
pub struct TokenRegex {
    source: String,
    compiled: Regex,
}

impl TokenRegex {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        let compiled = Regex::new(&format!("^(?:{source})$"))?;
        Ok(Self { source: source.to_string(), compiled })
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.compiled.is_match(text)
    }
}

impl fmt::Debug for TokenRegex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TokenRegex({:?})", self.source)
    }
}

impl PartialEq for TokenRegex {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Serialize for TokenRegex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for TokenRegex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let source = String::deserialize(d)?;
        TokenRegex::new(&source).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<LowerConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<TokenRegex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_digit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub like_num: Option<bool>,
    #[serde(default, skip_serializing_if = "Quantifier::is_one")]
    pub op: Quantifier,
}

impl TokenSpec {
    pub fn lower(s: &str) -> Self {
        Self { lower: Some(LowerConstraint::Exact(s.into())), ..Self::default() }
    }

    pub fn one_of(words: &[&str]) -> Self {
        let set = words.iter().map(|w| w.to_string()).collect();
        Self { lower: Some(LowerConstraint::OneOf(set)), ..Self::default() }
    }

    pub fn regex(source: &str) -> Self {
        Self { regex: Some(TokenRegex::new(source).expect("valid regex")), ..Self::default() }
    }

    pub fn like_num() -> Self {
        Self { like_num: Some(true), ..Self::default() }
    }

    pub fn digit() -> Self {
        Self { is_digit: Some(true), ..Self::default() }
    }

    pub fn with_op(mut self, op: Quantifier) -> Self {
        self.op = op;
        self
    }

    fn is_wildcard(&self) -> bool {
        self.lower.is_none() && self.regex.is_none() && self.is_digit.is_none() && self.like_num.is_none()
    }

    fn validate(&self) -> Result<(), String> {
        if self.is_wildcard() && self.op.is_one() {
            return Err("wildcard spec needs an explicit quantifier".into());
        }
        if let Some(LowerConstraint::OneOf(set)) = &self.lower {
            if set.is_empty() {
                return Err("empty one-of set".into());
            }
        }
        Ok(())
    }
}

/// True iff every constraint set on `spec` holds for `token`.
pub fn match_token(spec: &TokenSpec, token: &Token) -> bool {
    spec.lower.as_ref().is_none_or(|c| c.accepts(&token.lower))
        && spec.regex.as_ref().is_none_or(|r| r.is_match(&token.text))
        && spec.is_digit.is_none_or(|d| d == token.is_digit)
        && spec.like_num.is_none_or(|n| n == token.like_num)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPattern {
    #[serde(rename = "id")]
    pub pattern_id: String,
    pub label: PatternLabel,
    pub specs: Vec<TokenSpec>,
}

impl TokenPattern {
    pub fn new(id: &str, label: PatternLabel, specs: Vec<TokenSpec>) -> Self {
        Self { pattern_id: id.to_string(), label, specs }
    }

    /// End of the longest match starting at `start`, if it consumes at least
    /// one token.
    pub fn longest_match_at(&self, tokens: &[Token], start: usize) -> Option<usize> {
        let n = tokens.len();
        let mut reachable = vec![false; n + 1];
        reachable[start] = true;
        for spec in &self.specs {
            let (min, max) = spec.op.bounds();
            let mut next = vec![false; n + 1];
            let mut any = false;
            for p in (start..=n).filter(|&p| reachable[p]) {
                if min == 0 {
                    next[p] = true;
                    any = true;
                }
                let mut k = 0;
                while k < max && p + k < n && match_token(spec, &tokens[p + k]) {
                    k += 1;
                    if k >= min {
                        next[p + k] = true;
                        any = true;
                    }
                }
            }
            if !any {
                return None;
            }
            reachable = next;
        }
        (start + 1..=n).rev().find(|&e| reachable[e])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub pattern_id: String,
    pub label: PatternLabel,
    pub start_token: usize,
    pub end_token: usize,
    pub text: String,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.end_token - self.start_token
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &MatchSpan) -> bool {
        self.start_token < other.end_token && other.start_token < self.end_token
    }
}

/// Left-to-right scan returning non-overlapping longest matches.
pub fn find_matches(pattern: &TokenPattern, sentence: &Sentence) -> Vec<MatchSpan> {
    let tokens = &sentence.tokens;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        match pattern.longest_match_at(tokens, start) {
            Some(end) => {
                spans.push(MatchSpan {
                    pattern_id: pattern.pattern_id.clone(),
                    label: pattern.label,
                    start_token: start,
                    end_token: end,
                    text: sentence.token_text(start, end),
                });
                start = end;
            }
            None => start += 1,
        }
    }
    spans
}

/// An immutable, validated collection of patterns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatternSet {
    patterns: Vec<TokenPattern>,
}

impl PatternSet {
    pub fn new(patterns: Vec<TokenPattern>) -> Result<Self, PatternError> {
        let mut ids = std::collections::HashSet::new();
        for p in &patterns {
            if !ids.insert(p.pattern_id.as_str()) {
                return Err(PatternError::DuplicateId(p.pattern_id.clone()));
            }
            if p.specs.is_empty() {
                return Err(PatternError::EmptyPattern(p.pattern_id.clone()));
            }
            for (index, spec) in p.specs.iter().enumerate() {
                spec.validate().map_err(|reason| PatternError::InvalidSpec {
                    id: p.pattern_id.clone(),
                    index,
                    reason,
                })?;
            }
        }
        Ok(Self { patterns })
    }

    pub fn from_json(json: &str) -> Result<Self, PatternError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.patterns).expect("patterns serialize")
    }

    /// The shipped French posology patterns.
    pub fn french_default() -> Self {
        Self::from_json(crate::data::PATTERNS_FR).expect("bundled patterns are valid")
    }

    pub fn patterns(&self) -> &[TokenPattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn count_label(&self, label: PatternLabel) -> usize {
        self.patterns.iter().filter(|p| p.label == label).count()
    }
}

/// Union of all patterns' matches. Same-label overlaps keep the longest span
/// (then the leftmost); spans with different labels may overlap.
pub fn find_all(patterns: &PatternSet, sentence: &Sentence) -> Vec<MatchSpan> {
    find_all_with(patterns, sentence, |_| true)
}

pub fn find_all_with(
    patterns: &PatternSet,
    sentence: &Sentence,
    keep_label: impl Fn(PatternLabel) -> bool,
) -> Vec<MatchSpan> {
    let mut candidates: Vec<(usize, MatchSpan)> = Vec::new();
    for (order, p) in patterns.patterns.iter().enumerate() {
        if keep_label(p.label) {
            candidates.extend(find_matches(p, sentence).into_iter().map(|m| (order, m)));
        }
    }
    candidates.sort_by(|(oa, a), (ob, b)| {
        b.len().cmp(&a.len()).then(a.start_token.cmp(&b.start_token)).then(oa.cmp(ob))
    });
    let mut kept: Vec<MatchSpan> = Vec::new();
    for (_, cand) in candidates {
        if !kept.iter().any(|k| k.label == cand.label && k.overlaps(&cand)) {
            kept.push(cand);
        }
    }
    kept.sort_by(|a, b| {
        a.start_token.cmp(&b.start_token).then(a.end_token.cmp(&b.end_token)).then(a.label.cmp(&b.label))
    });
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::{tokenize, Stopwords};
    use proptest::prelude::*;

    fn sentence(text: &str) -> Sentence {
        Sentence::detached(text, &Stopwords::default()).unwrap()
    }

    /// Sentence built from raw tokens, bypassing number unification.
    fn raw_sentence(text: &str) -> Sentence {
        let mut s = sentence("xx");
        s.match_text = text.to_string();
        s.tokens = tokenize(text);
        s
    }

    fn token(text: &str) -> Token {
        tokenize(text).remove(0)
    }

    #[test]
    fn token_constraints() {
        assert!(match_token(&TokenSpec::one_of(&["cp", "comprime"]), &token("cp")));
        assert!(!match_token(&TokenSpec::digit(), &token("1.5")));
        assert!(match_token(&TokenSpec::like_num(), &token("1.5")));
        assert!(match_token(&TokenSpec::regex("jours?"), &token("jour")));
        assert!(!match_token(&TokenSpec::regex("jours?"), &token("bonjour")));
        let both = TokenSpec { like_num: Some(true), ..TokenSpec::lower("10") };
        assert!(match_token(&both, &token("10")));
        assert!(!match_token(&both, &token("11")));
    }

    #[test]
    fn find_matches_examples() {
        let dose = TokenPattern::new("d", PatternLabel::Dose, vec![TokenSpec::like_num(), TokenSpec::one_of(&["cp"])]);
        let m = find_matches(&dose, &sentence("prendre 1 cp matin"));
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].start_token, m[0].end_token, m[0].text.as_str()), (1, 3, "1 cp"));

        let nums = TokenPattern::new("n", PatternLabel::Dose, vec![TokenSpec::like_num().with_op(Quantifier::Plus)]);
        let m = find_matches(&nums, &raw_sentence("1 2 3 fin"));
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "1 2 3");

        let dur = TokenPattern::new(
            "dur",
            PatternLabel::Duration,
            vec![TokenSpec::lower("pendant"), TokenSpec::like_num(), TokenSpec::regex("jours?|semaines?|mois")],
        );
        let s = sentence("pendant 10 jours");
        let m = find_matches(&dur, &s);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "pendant 10 jours");
        assert_eq!(brute_force_matches(&dur, &s.tokens), vec![(0, 3)]);
    }

    #[test]
    fn greedy_quantifier_backtracks() {
        // `+` would swallow "3" if it could not give it back.
        let p = TokenPattern::new(
            "bt",
            PatternLabel::Dose,
            vec![TokenSpec::like_num().with_op(Quantifier::Plus), TokenSpec::like_num(), TokenSpec::lower("cp")],
        );
        let m = find_matches(&p, &raw_sentence("1 2 3 cp"));
        assert_eq!(m[0].text, "1 2 3 cp");
    }

    #[test]
    fn all_optional_pattern_never_returns_empty_spans() {
        let p = TokenPattern::new("o", PatternLabel::Comment, vec![TokenSpec::lower("si").with_op(Quantifier::Opt)]);
        let m = find_matches(&p, &sentence("prendre si besoin"));
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "si");
    }

    #[test]
    fn find_all_resolves_same_label_overlaps() {
        let set = PatternSet::new(vec![
            TokenPattern::new("short", PatternLabel::Dose, vec![TokenSpec::like_num(), TokenSpec::lower("cp")]),
            TokenPattern::new(
                "long",
                PatternLabel::Dose,
                vec![TokenSpec::like_num(), TokenSpec::lower("cp"), TokenSpec::lower("matin")],
            ),
            TokenPattern::new("dup", PatternLabel::Dose, vec![TokenSpec::digit(), TokenSpec::lower("cp")]),
            TokenPattern::new(
                "freq",
                PatternLabel::Frequency,
                vec![TokenSpec::lower("matin"), TokenSpec::lower("et"), TokenSpec::lower("soir")],
            ),
        ])
        .unwrap();
        let spans = find_all(&set, &sentence("1 cp matin et soir"));
        let got: Vec<_> = spans.iter().map(|s| (s.label, s.text.as_str())).collect();
        assert_eq!(got, [(PatternLabel::Dose, "1 cp matin"), (PatternLabel::Frequency, "matin et soir")]);

        let spans = find_all(&set, &sentence("1 cp"));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].pattern_id, "short");
    }

    #[test]
    fn pattern_file_validation() {
        let ok = r#"[{"id":"a","label":"DOSE","specs":[{"like_num":true},{"lower":["cp","gelule"],"op":"?"}]}]"#;
        let set = PatternSet::from_json(ok).unwrap();
        assert_eq!(set.patterns()[0].specs[1].op, Quantifier::Opt);
        let round = PatternSet::from_json(&set.to_json()).unwrap();
        assert_eq!(round, set);

        let dup = r#"[{"id":"a","label":"DOSE","specs":[{"like_num":true}]},{"id":"a","label":"DOSE","specs":[{"like_num":true}]}]"#;
        assert!(matches!(PatternSet::from_json(dup), Err(PatternError::DuplicateId(_))));
        let empty = r#"[{"id":"a","label":"DOSE","specs":[]}]"#;
        assert!(matches!(PatternSet::from_json(empty), Err(PatternError::EmptyPattern(_))));
        let wildcard = r#"[{"id":"a","label":"DOSE","specs":[{}]}]"#;
        assert!(matches!(PatternSet::from_json(wildcard), Err(PatternError::InvalidSpec { .. })));
        let star = r#"[{"id":"a","label":"DOSE","specs":[{"op":"*"},{"like_num":true}]}]"#;
        assert!(PatternSet::from_json(star).is_ok());
        let empty_set = r#"[{"id":"a","label":"DOSE","specs":[{"lower":[]}]}]"#;
        assert!(matches!(PatternSet::from_json(empty_set), Err(PatternError::InvalidSpec { .. })));
        let bad_regex = r#"[{"id":"a","label":"DOSE","specs":[{"regex":"("}]}]"#;
        assert!(matches!(PatternSet::from_json(bad_regex), Err(PatternError::Parse(_))));
        let bad_label = r#"[{"id":"a","label":"ROUTE","specs":[{"like_num":true}]}]"#;
        assert!(PatternSet::from_json(bad_label).is_err());
    }

    /// Independent matcher: for every (start, end) checks whether the tokens
    /// can be split into consecutive runs, one per spec, each run's length
    /// within the spec's bounds and every token accepted by its spec.
    fn splits(specs: &[TokenSpec], tokens: &[Token]) -> bool {
        match specs.split_first() {
            None => tokens.is_empty(),
            Some((spec, rest)) => {
                let (min, max) = spec.op.bounds();
                (min..=max.min(tokens.len())).any(|k| {
                    tokens[..k].iter().all(|t| match_token(spec, t)) && splits(rest, &tokens[k..])
                })
            }
        }
    }

    fn brute_force_matches(p: &TokenPattern, tokens: &[Token]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < tokens.len() {
            let best = (start + 1..=tokens.len()).filter(|&e| splits(&p.specs, &tokens[start..e])).max();
            match best {
                Some(e) => {
                    out.push((start, e));
                    start = e;
                }
                None => start += 1,
            }
        }
        out
    }

    fn spec_strategy() -> impl Strategy<Value = TokenSpec> {
        let constraint = prop_oneof![
            Just(TokenSpec::like_num()),
            Just(TokenSpec::digit()),
            Just(TokenSpec::lower("a")),
            Just(TokenSpec::one_of(&["a", "b"])),
            Just(TokenSpec::regex("[bc]")),
            Just(TokenSpec { like_num: Some(false), ..TokenSpec::default() }),
        ];
        let op = prop_oneof![Just(Quantifier::One), Just(Quantifier::Opt), Just(Quantifier::Plus), Just(Quantifier::Star)];
        (constraint, op).prop_map(|(s, op)| s.with_op(op))
    }

    fn words() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "1", "2.5", "x"]), 0..=8)
            .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn matcher_agrees_with_brute_force(specs in prop::collection::vec(spec_strategy(), 1..=4), text in words()) {
            let p = TokenPattern::new("p", PatternLabel::Dose, specs);
            let s = raw_sentence(&text);
            let got: Vec<_> = find_matches(&p, &s).iter().map(|m| (m.start_token, m.end_token)).collect();
            prop_assert_eq!(&got, &brute_force_matches(&p, &s.tokens));
            for w in got.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
            for (a, b) in got {
                prop_assert!(splits(&p.specs, &s.tokens[a..b]));
            }
        }
    }
}
