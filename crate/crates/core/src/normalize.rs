//! Line text normalization and tokenization.
//!
//! Every line is turned into a [`Sentence`] with two views:
//!
//! * `match_text`: accents stripped, lowercased, whitespace collapsed and
//!   numbers unified. Token patterns and the drug lexicon work on this view.
//! * `feature_text`: the same tokens with stopwords removed, fed to the
//!   sentence classifier.
//!
//! Each normalization step keeps a map from output characters back to the
//! characters of the raw line, so spans found on `match_text` can be reported
//! against the original OCR text.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::{decompose_canonical, is_combining_mark};

use crate::ocr::{BoundingBox, OcrLine};

/// Characters split off as their own tokens.
const PUNCTUATION: &[char] = &['.', ',', ';', ':', '(', ')', '/'];

/// Text paired with the raw-text character index each char came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappedText {
    pub chars: Vec<char>,
    pub origin: Vec<usize>,
}

impl MappedText {
    pub fn new(s: &str) -> Self {
        let chars: Vec<char> = s.chars().collect();
        let origin = (0..chars.len()).collect();
        Self { chars, origin }
    }

    fn push(&mut self, c: char, origin: usize) {
        self.chars.push(c);
        self.origin.push(origin);
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    fn map_chars(&self, mut f: impl FnMut(char, &mut dyn FnMut(char))) -> Self {
        let mut out = Self::default();
        for (&c, &o) in self.chars.iter().zip(&self.origin) {
            f(c, &mut |d| out.push(d, o));
        }
        out
    }

    pub fn strip_accents(&self) -> Self {
        self.map_chars(|c, emit| {
            decompose_canonical(c, |d| {
                if !is_combining_mark(d) {
                    emit(d)
                }
            })
        })
    }

    pub fn lowercase(&self) -> Self {
        self.map_chars(|c, emit| c.to_lowercase().for_each(&mut *emit))
    }

    /// Trims and collapses every whitespace run into a single ASCII space.
    pub fn collapse_whitespace(&self) -> Self {
        let mut out = Self::default();
        let mut pending: Option<usize> = None;
        for (&c, &o) in self.chars.iter().zip(&self.origin) {
            if c.is_whitespace() {
                if pending.is_none() {
                    pending = Some(o);
                }
                continue;
            }
            if let Some(ws) = pending.take() {
                if !out.chars.is_empty() {
                    out.push(' ', ws);
                }
            }
            out.push(c, o);
        }
        out
    }

    /// Joins digit groups split by one space and turns decimal commas into
    /// dots, dropping a single space on either side of the separator.
    pub fn unify_numbers(&self) -> Self {
        let input = &self.chars;
        let n = input.len();
        let digit_at = |i: usize| i < n && input[i].is_ascii_digit();
        let space_at = |i: usize| i < n && is_group_space(input[i]);
        let mut out = Self::default();
        let mut i = 0;
        while i < n {
            let c = input[i];
            if is_group_space(c)
                && out.chars.last().is_some_and(|p| p.is_ascii_digit())
                && digit_at(i + 1)
            {
                i += 1;
                continue;
            }
            out.push(c, self.origin[i]);
            if c.is_ascii_digit() {
                let mut sep = i + 1;
                if space_at(sep) {
                    sep += 1;
                }
                if sep < n && matches!(input[sep], ',' | '.') {
                    let mut next = sep + 1;
                    if space_at(next) {
                        next += 1;
                    }
                    if digit_at(next) {
                        out.push('.', self.origin[sep]);
                        i = next;
                        continue;
                    }
                }
            }
            i += 1;
        }
        out
    }
}

fn is_group_space(c: char) -> bool {
    matches!(c, ' ' | '\u{2009}' | '\u{202F}' | '\u{00A0}')
}

/// Removes combining accents after canonical decomposition.
pub fn strip_accents(s: &str) -> String {
    MappedText::new(s).strip_accents().as_string()
}

pub fn unify_numbers(s: &str) -> String {
    MappedText::new(s).unify_numbers().as_string()
}

/// Full match-view normalization with the raw-text origin of every char.
pub fn normalize_mapped(s: &str) -> MappedText {
    // Stripping again after lowercasing catches lowercase mappings that
    // introduce combining marks (e.g. U+0130).
    MappedText::new(s)
        .strip_accents()
        .lowercase()
        .strip_accents()
        .collapse_whitespace()
        .unify_numbers()
}

pub fn normalize_text(s: &str) -> String {
    normalize_mapped(s).as_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub lower: String,
    pub is_digit: bool,
    pub like_num: bool,
    /// Char offsets into the sentence's `match_text`.
    pub start: usize,
    pub end: usize,
    /// Char offsets into the raw line text.
    pub src_start: usize,
    pub src_end: usize,
    pub is_stop: bool,
}

impl Token {
    fn new(text: String, start: usize, end: usize) -> Self {
        let lower = text.to_lowercase();
        let is_digit = !text.is_empty() && text.chars().all(|c| c.is_ascii_digit());
        let like_num = is_digit || looks_numeric(&text);
        Self { text, lower, is_digit, like_num, start, end, src_start: 0, src_end: 0, is_stop: false }
    }

    pub fn char_len(&self) -> usize {
        self.end - self.start
    }
}

/// `12`, `0.5`, `1/2`.
fn looks_numeric(s: &str) -> bool {
    let digits = |p: &str| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit());
    if let Some((a, b)) = s.split_once('/') {
        return digits(a) && digits(b);
    }
    match s.split_once('.') {
        Some((a, b)) => digits(a) && digits(b),
        None => digits(s),
    }
}

/// Whitespace split, then punctuation split. Dots and slashes between two
/// digits stay inside the token so `1.5` and `1/2` survive whole.
pub fn tokenize(s: &str) -> Vec<Token> {
    let chars: Vec<char> = s.chars().collect();
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, start: &mut Option<usize>, end: usize| {
        if let Some(b) = start.take() {
            tokens.push(Token::new(chars[b..end].iter().collect(), b, end));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut tokens, &mut start, i);
            continue;
        }
        if PUNCTUATION.contains(&c) {
            let inside_number = matches!(c, '.' | '/')
                && start.is_some()
                && i > 0
                && chars[i - 1].is_ascii_digit()
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
            if !inside_number {
                flush(&mut tokens, &mut start, i);
                tokens.push(Token::new(c.to_string(), i, i + 1));
                continue;
            }
        }
        if start.is_none() {
            start = Some(i);
        }
    }
    flush(&mut tokens, &mut start, chars.len());
    tokens
}

/// Stopword list for the classifier view.
#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// One word per line; `#` starts a comment. Entries are normalized like
    /// sentence text.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .map(normalize_text)
            .filter(|w| !w.is_empty())
            .collect();
        Self(words)
    }

    pub fn french() -> Self {
        Self::parse(crate::data::STOPWORDS_FR)
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        Self(words.into_iter().map(|w| normalize_text(w.as_ref())).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub line_id: String,
    pub raw_text: String,
    pub match_text: String,
    pub feature_text: String,
    pub tokens: Vec<Token>,
    pub bbox: BoundingBox,
    pub page: u32,
}

impl Sentence {
    /// Normalizes `raw_text`; `None` when the short-line rule drops it.
    pub fn from_text(
        line_id: impl Into<String>,
        raw_text: &str,
        bbox: BoundingBox,
        page: u32,
        stopwords: &Stopwords,
    ) -> Option<Self> {
        let mapped = normalize_mapped(raw_text);
        let match_text = mapped.as_string();
        let mut tokens = tokenize(&match_text);
        if tokens.is_empty() || (tokens.len() == 1 && tokens[0].char_len() < 2) {
            return None;
        }
        let raw_len = raw_text.chars().count();
        for t in &mut tokens {
            t.src_start = mapped.origin[t.start];
            t.src_end = (mapped.origin[t.end - 1] + 1).min(raw_len);
            t.is_stop = stopwords.contains(&t.lower);
        }
        let feature_text = feature_view(&tokens);
        Some(Self {
            line_id: line_id.into(),
            raw_text: raw_text.to_string(),
            match_text,
            feature_text,
            tokens,
            bbox,
            page,
        })
    }

    /// Builds a sentence over `text` with no geometry attached.
    pub fn detached(text: &str, stopwords: &Stopwords) -> Option<Self> {
        Self::from_text("", text, BoundingBox::new(0.0, 0.0, 1.0, 1.0), 1, stopwords)
    }

    /// The tokens from `from` onwards as a sentence on the same line and
    /// geometry. Raw-text offsets still point into the original line.
    pub fn suffix(&self, from: usize) -> Sentence {
        let from = from.min(self.tokens.len());
        let base = self.tokens.get(from).map_or(0, |t| t.start);
        let tokens: Vec<Token> = self.tokens[from..]
            .iter()
            .map(|t| Token { start: t.start - base, end: t.end - base, ..t.clone() })
            .collect();
        let match_text = match (self.tokens.get(from), self.tokens.last()) {
            (Some(first), Some(last)) => self.match_slice(first.start, last.end),
            _ => String::new(),
        };
        Sentence {
            line_id: self.line_id.clone(),
            raw_text: self.raw_text.clone(),
            feature_text: feature_view(&tokens),
            match_text,
            tokens,
            bbox: self.bbox,
            page: self.page,
        }
    }

    /// `match_text` between two char offsets.
    pub fn match_slice(&self, start: usize, end: usize) -> String {
        self.match_text.chars().skip(start).take(end.saturating_sub(start)).collect()
    }

    /// Text covered by tokens `[start, end)`.
    pub fn token_text(&self, start: usize, end: usize) -> String {
        if start >= end || end > self.tokens.len() {
            return String::new();
        }
        self.match_slice(self.tokens[start].start, self.tokens[end - 1].end)
    }

    /// Raw-text char range covered by tokens `[start, end)`.
    pub fn source_range(&self, start: usize, end: usize) -> (usize, usize) {
        (self.tokens[start].src_start, self.tokens[end - 1].src_end)
    }
}

fn feature_view(tokens: &[Token]) -> String {
    tokens.iter().filter(|t| !t.is_stop).map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Normalizes an OCR line; `None` means the line was dropped.
pub fn make_sentence(line: &OcrLine, stopwords: &Stopwords) -> Option<Sentence> {
    Sentence::from_text(&line.line_id, &line.raw_text, line.bbox, line.page, stopwords)
}
