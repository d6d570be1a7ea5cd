//! Synthetic annotated corpus: drug lines built from lexicon names,
//! posology lines assembled from slot phrases, and boilerplate lines.
//!
//! Every sentence is generated from its own RNG derived from the corpus seed,
//! its class and its index, so a corpus is reproducible from its spec alone.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::{decompose_canonical, is_combining_mark};

use crate::classifier::ClassLabel;
use crate::drug::DrugLexicon;
use crate::normalize::{Sentence, Stopwords};
use crate::posology::PosologyKind;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("lexicon is empty")]
    LexiconEmpty,
    #[error("template error: {0}")]
    Template(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Drug,
    Dose,
    Frequency,
    Duration,
    Comment,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [Self::Drug, Self::Dose, Self::Frequency, Self::Duration, Self::Comment];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Drug => "DRUG",
            Self::Dose => "DOSE",
            Self::Frequency => "FREQUENCY",
            Self::Duration => "DURATION",
            Self::Comment => "COMMENT",
        }
    }
}

impl From<PosologyKind> for EntityKind {
    fn from(k: PosologyKind) -> Self {
        match k {
            PosologyKind::Dose => Self::Dose,
            PosologyKind::Frequency => Self::Frequency,
            PosologyKind::Duration => Self::Duration,
            PosologyKind::Comment => Self::Comment,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Entity span as char offsets into the sentence text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoldSpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    pub label: ClassLabel,
    pub spans: Vec<GoldSpan>,
}

impl AnnotatedSentence {
    pub fn span_text(&self, span: &GoldSpan) -> String {
        self.text.chars().skip(span.start).take(span.end - span.start).collect()
    }

    fn check(&self, line: usize) -> Result<(), CorpusError> {
        let len = self.text.chars().count();
        for s in &self.spans {
            if s.start >= s.end || s.end > len {
                return Err(CorpusError::Invalid {
                    line,
                    reason: format!("span {}..{} out of bounds for {len} chars", s.start, s.end),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_drug: usize,
    pub n_posology: usize,
    pub n_useless: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { n_drug: 1500, n_posology: 1500, n_useless: 1500, seed: 42 }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct PosologyTemplates {
    lead: Vec<String>,
    separators: Vec<String>,
    dose: Vec<String>,
    frequency: Vec<String>,
    duration: Vec<String>,
    comment: Vec<String>,
    schedule: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct DrugTemplates {
    prefixes: Vec<String>,
    suffixes: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct UselessTemplates {
    templates: Vec<String>,
    #[serde(flatten)]
    lists: BTreeMap<String, Vec<String>>,
}

/// Phrase lists driving generation, loaded from JSON.
#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    values: BTreeMap<String, Vec<String>>,
    posology: PosologyTemplates,
    drug: DrugTemplates,
    useless: UselessTemplates,
}

impl Templates {
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let t: Templates = serde_json::from_str(json).map_err(|e| CorpusError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn french() -> Self {
        Self::from_json(crate::data::TEMPLATES_FR).expect("bundled templates are valid")
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let p = &self.posology;
        let lists = [
            ("lead", &p.lead),
            ("separators", &p.separators),
            ("dose", &p.dose),
            ("frequency", &p.frequency),
            ("duration", &p.duration),
            ("comment", &p.comment),
            ("schedule", &p.schedule),
            ("useless", &self.useless.templates),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(CorpusError::Template(format!("{name} list is empty")));
            }
        }
        if self.values.values().chain(self.useless.lists.values()).any(|v| v.is_empty()) {
            return Err(CorpusError::Template("empty value list".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = p.dose.iter().chain(&p.frequency).chain(&p.duration).chain(&p.comment);
        for t in all.chain(&p.schedule).chain(&self.useless.templates) {
            self.fill(t, &mut rng)?;
        }
        Ok(())
    }

    fn value(&self, key: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        if let Some(v) = self.values.get(key).or_else(|| self.useless.lists.get(key)) {
            return v.choose(rng).cloned();
        }
        let lower = key.to_lowercase();
        if lower != key {
            if let Some(v) = self.useless.lists.get(&lower) {
                return v.choose(rng).map(|s| s.to_uppercase());
            }
        }
        let digits = |rng: &mut ChaCha8Rng, n: usize| -> String {
            (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
        };
        Some(match key {
            "num" => rng.gen_range(1..=150).to_string(),
            "zip" => format!("{:02}{}", rng.gen_range(1..=95), digits(rng, 3)),
            "phone" => {
                let mut s = format!("0{}", rng.gen_range(1..=9));
                for _ in 0..4 {
                    s.push(' ');
                    s.push_str(&digits(rng, 2));
                }
                s
            }
            "dd" => format!("{:02}", rng.gen_range(1..=28)),
            "mm" => format!("{:02}", rng.gen_range(1..=12)),
            "yyyy" => rng.gen_range(1935..=2024).to_string(),
            "age" => rng.gen_range(1..=95).to_string(),
            "kg" => rng.gen_range(8..=110).to_string(),
            "rpps" => format!("10{}", digits(rng, 9)),
            "am" | "finess" => format!("{}{}", rng.gen_range(1..=9), digits(rng, 8)),
            "email" => {
                let last = self.useless.lists.get("last").and_then(|v| v.choose(rng)).cloned().unwrap_or_default();
                format!("cabinet.{}@medecin.fr", last.to_lowercase())
            }
            _ => return None,
        })
    }

    fn fill(&self, template: &str, rng: &mut ChaCha8Rng) -> Result<String, CorpusError> {
        let mut out = String::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| CorpusError::Template(format!("unclosed placeholder in {template:?}")))?;
            let key = &rest[open + 1..open + close];
            let v = self
                .value(key, rng)
                .ok_or_else(|| CorpusError::Template(format!("unknown placeholder {{{key}}} in {template:?}")))?;
            out.push_str(&v);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &'a [String]) -> &'a str {
    list.choose(rng).map(String::as_str).unwrap_or("")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Builds a line while tracking char offsets of the labeled parts.
#[derive(Default)]
struct LineBuilder {
    text: String,
    len: usize,
    spans: Vec<GoldSpan>,
}

impl LineBuilder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.len += s.chars().count();
    }

    fn push_labeled(&mut self, s: &str, kinds: &[EntityKind]) {
        let start = self.len;
        self.push(s);
        for &kind in kinds {
            self.spans.push(GoldSpan { kind, start, end: self.len });
        }
    }

    fn finish(mut self, label: ClassLabel) -> AnnotatedSentence {
        self.spans.sort();
        AnnotatedSentence { text: self.text, label, spans: self.spans }
    }
}

/// Derives an independent stream seed; splitmix64 finalizer.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn drug_line(t: &Templates, lexicon: &DrugLexicon, rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let entry = lexicon.entries().choose(rng).expect("lexicon is not empty");
    let (base, form) = match entry.name.split_once(", ") {
        Some((b, f)) => (b.to_string(), Some(f.to_string())),
        None => (entry.name.clone(), None),
    };
    let mut name = match (rng.gen_range(0..4), form) {
        (0, Some(f)) => format!("{base}, {f}"),
        (1, Some(f)) => format!("{base} {f}"),
        (2, _) => attach_units(&base),
        _ => base,
    };
    name = match rng.gen_range(0..4) {
        0 => name.to_lowercase(),
        1 => capitalize(&name.to_lowercase()),
        _ => name,
    };
    let mut b = LineBuilder::default();
    if rng.gen_bool(0.3) {
        b.push(pick(rng, &t.drug.prefixes));
        b.push(" ");
    }
    b.push_labeled(&name, &[EntityKind::Drug]);
    if rng.gen_bool(0.3) {
        b.push(" ");
        b.push(pick(rng, &t.drug.suffixes));
    }
    b.finish(ClassLabel::Drug)
}

/// "1000 mg" becomes "1000mg".
fn attach_units(s: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let between = c == ' '
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
        if !between {
            out.push(c);
        }
    }
    out
}

fn posology_line(t: &Templates, rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let p = &t.posology;
    let mut slots: Vec<(Vec<EntityKind>, &[String])> = Vec::new();
    if rng.gen_bool(0.08) {
        slots.push((vec![EntityKind::Dose, EntityKind::Frequency], &p.schedule));
    } else {
        if rng.gen_bool(0.8) {
            slots.push((vec![EntityKind::Dose], &p.dose));
        }
        if rng.gen_bool(0.75) {
            slots.push((vec![EntityKind::Frequency], &p.frequency));
        }
    }
    if rng.gen_bool(0.45) {
        slots.push((vec![EntityKind::Duration], &p.duration));
    }
    if rng.gen_bool(0.35) {
        slots.push((vec![EntityKind::Comment], &p.comment));
    }
    if slots.is_empty() {
        let all: [(EntityKind, &[String]); 4] = [
            (EntityKind::Dose, &p.dose),
            (EntityKind::Frequency, &p.frequency),
            (EntityKind::Duration, &p.duration),
            (EntityKind::Comment, &p.comment),
        ];
        let (k, list) = all[rng.gen_range(0..4)];
        slots.push((vec![k], list));
    }
    if slots.len() >= 2 && rng.gen_bool(0.15) {
        let n = slots.len();
        slots.swap(n - 2, n - 1);
    }
    let mut b = LineBuilder::default();
    if rng.gen_bool(0.3) {
        b.push(pick(rng, &p.lead));
        b.push(" ");
    }
    for (i, (kinds, list)) in slots.iter().enumerate() {
        if i > 0 {
            b.push(pick(rng, &p.separators));
        }
        let phrase = t.fill(pick(rng, list), rng).expect("templates were validated");
        b.push_labeled(&phrase, kinds);
    }
    let mut s = b.finish(ClassLabel::Posology);
    if rng.gen_bool(0.4) {
        s.text = capitalize(&s.text);
    }
    s
}

fn useless_line(t: &Templates, rng: &mut ChaCha8Rng) -> AnnotatedSentence {
    let text = t.fill(pick(rng, &t.useless.templates), rng).expect("templates were validated");
    AnnotatedSentence { text, label: ClassLabel::Useless, spans: Vec::new() }
}

/// Generates `n_drug + n_posology + n_useless` sentences, shuffled with the
/// spec seed.
pub fn generate(spec: &CorpusSpec, templates: &Templates, lexicon: &DrugLexicon) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    if lexicon.is_empty() {
        return Err(CorpusError::LexiconEmpty);
    }
    let mut out = Vec::with_capacity(spec.n_drug + spec.n_posology + spec.n_useless);
    let rng_for = |stream: u64, i: usize| ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream, i as u64));
    out.extend((0..spec.n_drug).map(|i| drug_line(templates, lexicon, &mut rng_for(1, i))));
    out.extend((0..spec.n_posology).map(|i| posology_line(templates, &mut rng_for(2, i))));
    out.extend((0..spec.n_useless).map(|i| useless_line(templates, &mut rng_for(3, i))));
    out.shuffle(&mut rng_for(0, 0));
    Ok(out)
}

#[derive(Clone, Copy)]
enum Mutation {
    Keep,
    Replace(char),
    Delete,
    SpaceAfter,
}

fn mutation_options(c: char, next: Option<char>) -> Vec<Mutation> {
    let mut opts = Vec::new();
    if is_combining_mark(c) {
        opts.push(Mutation::Delete);
    }
    let mut base = None;
    let mut accented = false;
    decompose_canonical(c, |d| {
        if is_combining_mark(d) {
            accented = true;
        } else if base.is_none() {
            base = Some(d);
        }
    });
    if let (true, Some(b)) = (accented, base) {
        opts.push(Mutation::Replace(b));
    }
    match c {
        '0' => opts.push(Mutation::Replace('O')),
        'O' | 'o' => opts.push(Mutation::Replace('0')),
        '1' => opts.push(Mutation::Replace('l')),
        'l' => opts.push(Mutation::Replace('1')),
        _ => {}
    }
    if c.is_ascii_digit() && next.is_some_and(|n| n.is_ascii_digit()) {
        opts.push(Mutation::SpaceAfter);
    }
    opts
}

/// Applies OCR-style corruption: accent loss, O/0 and l/1 confusions and
/// spaces inside numbers. Each char mutates with probability `rate`, at
/// most `ceil(rate * len)` mutations happen, and the first and last chars
/// of every span are left alone. Spans are remapped onto the new text.
pub fn noisify(sentence: &AnnotatedSentence, rate: f64, rng: &mut impl Rng) -> AnnotatedSentence {
    let chars: Vec<char> = sentence.text.chars().collect();
    let rate = rate.clamp(0.0, 1.0);
    let mut budget = (rate * chars.len() as f64).ceil() as usize;
    let mut protected = vec![false; chars.len()];
    for s in &sentence.spans {
        protected[s.start] = true;
        protected[s.end - 1] = true;
    }
    let mut out: Vec<char> = Vec::with_capacity(chars.len() + 4);
    let mut new_index = vec![0usize; chars.len()];
    let mut skip = false;
    for (i, &c) in chars.iter().enumerate() {
        new_index[i] = out.len();
        let mutate = !std::mem::take(&mut skip) && !protected[i] && budget > 0 && rng.gen_bool(rate);
        let m = if mutate {
            *mutation_options(c, chars.get(i + 1).copied()).choose(rng).unwrap_or(&Mutation::Keep)
        } else {
            Mutation::Keep
        };
        match m {
            Mutation::Keep => out.push(c),
            Mutation::Replace(d) => out.push(d),
            Mutation::Delete => {}
            Mutation::SpaceAfter => {
                out.push(c);
                out.push(' ');
                // the digit after the space stays as is so the number still rejoins
                skip = true;
            }
        }
        if !matches!(m, Mutation::Keep) {
            budget -= 1;
        }
    }
    let spans = sentence
        .spans
        .iter()
        .map(|s| GoldSpan { kind: s.kind, start: new_index[s.start], end: new_index[s.end - 1] + 1 })
        .collect();
    AnnotatedSentence { text: out.into_iter().collect(), label: sentence.label, spans }
}

/// Noisifies every sentence with its own derived RNG.
pub fn noisify_corpus(corpus: &[AnnotatedSentence], rate: f64, seed: u64) -> Vec<AnnotatedSentence> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| noisify(s, rate, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, i as u64))))
        .collect()
}

/// Classifier training pairs; sentences the normalizer drops are skipped.
pub fn training_pairs(corpus: &[AnnotatedSentence], stopwords: &Stopwords) -> Vec<(Sentence, ClassLabel)> {
    corpus
        .iter()
        .filter_map(|s| Sentence::detached(&s.text, stopwords).map(|sent| (sent, s.label)))
        .collect()
}

pub fn write_jsonl(corpus: &[AnnotatedSentence], mut w: impl Write) -> io::Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: AnnotatedSentence =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        s.check(i + 1)?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> CorpusSpec {
        CorpusSpec { n_drug: 40, n_posology: 60, n_useless: 30, seed }
    }

    fn corpus(seed: u64) -> Vec<AnnotatedSentence> {
        generate(&small_spec(seed), &Templates::french(), &DrugLexicon::french_sample()).unwrap()
    }

    #[test]
    fn class_counts_match_the_spec() {
        let c = corpus(1);
        let count = |l| c.iter().filter(|s| s.label == l).count();
        assert_eq!((count(ClassLabel::Drug), count(ClassLabel::Posology), count(ClassLabel::Useless)), (40, 60, 30));
    }

    #[test]
    fn generation_is_reproducible() {
        assert_eq!(corpus(5), corpus(5));
        assert_ne!(corpus(5), corpus(6));
    }

    #[test]
    fn spans_fit_their_sentences() {
        for s in corpus(2) {
            s.check(0).unwrap();
            match s.label {
                ClassLabel::Drug => assert_eq!(s.spans.len(), 1),
                ClassLabel::Posology => assert!(!s.spans.is_empty()),
                ClassLabel::Useless => assert!(s.spans.is_empty()),
            }
            for sp in &s.spans {
                let t = s.span_text(sp);
                assert_eq!(t.trim(), t, "{:?} in {:?}", sp, s.text);
            }
        }
    }

    #[test]
    fn unit_attachment() {
        assert_eq!(attach_units("DOLIPRANE 1000 mg"), "DOLIPRANE 1000mg");
        assert_eq!(attach_units("XANAX 0,25 mg"), "XANAX 0,25mg");
    }

    #[test]
    fn zero_rate_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in corpus(3) {
            assert_eq!(noisify(&s, 0.0, &mut rng), s);
        }
    }

    /// Undoes the confusions noisify can introduce, for comparing texts.
    fn canonical(s: &str) -> String {
        crate::normalize::strip_accents(s)
            .chars()
            .filter(|c| *c != ' ')
            .map(|c| match c {
                'O' | 'o' => '0',
                'l' => '1',
                c => c,
            })
            .collect()
    }

    #[test]
    fn noisy_spans_still_cover_their_entities() {
        let clean = corpus(4);
        let noisy = noisify_corpus(&clean, 0.3, 9);
        let mut changed = 0;
        for (c, n) in clean.iter().zip(&noisy) {
            changed += usize::from(c.text != n.text);
            assert_eq!(c.spans.len(), n.spans.len());
            for (cs, ns) in c.spans.iter().zip(&n.spans) {
                let (ct, nt) = (c.span_text(cs), n.span_text(ns));
                assert_eq!(ct.chars().next(), nt.chars().next());
                assert_eq!(ct.chars().last(), nt.chars().last());
                assert_eq!(canonical(&ct), canonical(&nt));
            }
        }
        assert!(changed > clean.len() / 4);
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus(8);
        let mut buf = Vec::new();
        write_jsonl(&c, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), c);
        let bad = br#"{"text":"ab","label":"DRUG","spans":[{"kind":"DRUG","start":0,"end":5}]}"#;
        assert!(matches!(read_jsonl(&bad[..]), Err(CorpusError::Invalid { line: 1, .. })));
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let json = crate::data::TEMPLATES_FR.replace("\"Signature\",", "\"{nope}\",");
        assert!(matches!(Templates::from_json(&json), Err(CorpusError::Template(_))));
    }
}
