//! Three-way sentence classifier: drug line, posology line or boilerplate.
//!
//! Sentences are featurized as hashed character n-grams plus word unigrams
//! of their `feature_text`, L2-normalized, and scored by a multinomial
//! logistic regression trained with seeded SGD.

use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::Sentence;

pub const MODEL_MAGIC: &[u8; 8] = b"POSOCLF\x01";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("model feature config {model:?} does not match runtime config {runtime:?}")]
    VersionMismatch { model: String, runtime: String },
    #[error("invalid model file: {0}")]
    ModelFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassLabel {
    Drug,
    Posology,
    Useless,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [Self::Drug, Self::Posology, Self::Useless];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Drug => "DRUG",
            Self::Posology => "POSOLOGY",
            Self::Useless => "USELESS",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| format!("unknown class label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ngram_min: u32,
    pub ngram_max: u32,
    /// The hash space has `2^hash_bits` slots.
    pub hash_bits: u32,
    pub word_unigrams: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { ngram_min: 3, ngram_max: 5, hash_bits: 18, word_unigrams: true }
    }
}

impl FeatureConfig {
    pub fn dimension(&self) -> usize {
        1usize << self.hash_bits
    }

    pub fn version(&self) -> String {
        format!(
            "hashed-ngrams/v1/{}-{}/{}/{}",
            self.ngram_min,
            self.ngram_max,
            self.hash_bits,
            if self.word_unigrams { "words" } else { "nowords" }
        )
    }

    /// The raw string features of `text`, before hashing.
    pub fn feature_strings(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        if text.is_empty() {
            return out;
        }
        let padded: Vec<char> = format!(" {text} ").chars().collect();
        for n in self.ngram_min as usize..=self.ngram_max as usize {
            if n == 0 || n > padded.len() {
                continue;
            }
            for w in padded.windows(n) {
                out.push(format!("c:{}", w.iter().collect::<String>()));
            }
        }
        if self.word_unigrams {
            out.extend(text.split_whitespace().map(|w| format!("w:{w}")));
        }
        out
    }
}

/// Sparse vector sorted by index with no duplicate indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

fn hash_feature(feature: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(feature.as_bytes());
    h.finish()
}

pub fn featurize_text(text: &str, config: &FeatureConfig) -> SparseVector {
    let mask = (config.dimension() - 1) as u64;
    let mut idx: Vec<u32> =
        config.feature_strings(text).iter().map(|f| (hash_feature(f) & mask) as u32).collect();
    idx.sort_unstable();
    let mut entries: Vec<(u32, f64)> = Vec::new();
    for i in idx {
        match entries.last_mut() {
            Some((last, count)) if *last == i => *count += 1.0,
            _ => entries.push((i, 1.0)),
        }
    }
    let v = SparseVector { entries };
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    SparseVector { entries: v.entries.into_iter().map(|(i, c)| (i, c / norm)).collect() }
}

pub fn featurize(sentence: &Sentence, config: &FeatureConfig) -> SparseVector {
    featurize_text(&sentence.feature_text, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceClass {
    pub label: ClassLabel,
    /// Probabilities indexed by [`ClassLabel::index`].
    pub probabilities: [f64; 3],
}

impl SentenceClass {
    pub fn probability(&self, label: ClassLabel) -> f64 {
        self.probabilities[label.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch decay: the rate at epoch `e` is `learning_rate / (1 + decay * e)`.
    pub decay: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.1, decay: 0.05, seed: 42, holdout_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: FeatureConfig,
    pub version: String,
    /// One dense weight vector per class, each of length `config.dimension()`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub train_size: usize,
    pub train_accuracy: f64,
    pub holdout_size: usize,
    pub holdout_accuracy: Option<f64>,
}

fn softmax(scores: [f64; 3]) -> [f64; 3] {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.map(|s| (s - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

fn argmax(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    fn zeros(config: FeatureConfig) -> Self {
        let dim = config.dimension();
        Self { config, version: config.version(), weights: vec![vec![0.0; dim]; 3], bias: vec![0.0; 3] }
    }

    fn scores(&self, x: &SparseVector) -> [f64; 3] {
        let mut s = [self.bias[0], self.bias[1], self.bias[2]];
        for (c, w) in self.weights.iter().enumerate() {
            s[c] += x.entries.iter().map(|&(i, v)| w[i as usize] * v).sum::<f64>();
        }
        s
    }

    pub fn predict_vector(&self, x: &SparseVector) -> SentenceClass {
        let probabilities = softmax(self.scores(x));
        SentenceClass { label: ClassLabel::from_index(argmax(&probabilities)), probabilities }
    }

    pub fn predict(&self, sentence: &Sentence) -> SentenceClass {
        self.predict_vector(&featurize(sentence, &self.config))
    }

    pub fn ensure_compatible(&self, runtime: &FeatureConfig) -> Result<(), ClassifierError> {
        if self.config != *runtime || self.version != runtime.version() {
            return Err(ClassifierError::VersionMismatch {
                model: self.version.clone(),
                runtime: runtime.version(),
            });
        }
        Ok(())
    }

    /// Binary model file; the layout is documented in the README.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        let version = self.version.as_bytes();
        out.extend_from_slice(&(version.len() as u32).to_le_bytes());
        out.extend_from_slice(version);
        out.extend_from_slice(&self.config.ngram_min.to_le_bytes());
        out.extend_from_slice(&self.config.ngram_max.to_le_bytes());
        out.extend_from_slice(&self.config.hash_bits.to_le_bytes());
        out.push(self.config.word_unigrams as u8);
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(&b.to_le_bytes());
            let nonzero: Vec<(usize, f64)> =
                w.iter().copied().enumerate().filter(|(_, v)| v.to_bits() != 0).collect();
            out.extend_from_slice(&(nonzero.len() as u32).to_le_bytes());
            for (i, v) in nonzero {
                out.extend_from_slice(&(i as u32).to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(ClassifierError::ModelFormat("bad magic".into()));
        }
        let vlen = r.u32()? as usize;
        let version = String::from_utf8(r.take(vlen)?.to_vec())
            .map_err(|_| ClassifierError::ModelFormat("version is not UTF-8".into()))?;
        let config = FeatureConfig {
            ngram_min: r.u32()?,
            ngram_max: r.u32()?,
            hash_bits: r.u32()?,
            word_unigrams: r.take(1)?[0] != 0,
        };
        if config.hash_bits > 28 || config.ngram_min > config.ngram_max {
            return Err(ClassifierError::ModelFormat("implausible feature config".into()));
        }
        if version != config.version() {
            return Err(ClassifierError::ModelFormat(format!(
                "version {version:?} does not describe the stored config"
            )));
        }
        let classes = r.u32()? as usize;
        if classes != 3 {
            return Err(ClassifierError::ModelFormat(format!("expected 3 classes, found {classes}")));
        }
        let dim = config.dimension();
        let mut weights = Vec::with_capacity(classes);
        let mut bias = Vec::with_capacity(classes);
        for _ in 0..classes {
            bias.push(r.f64()?);
            let nnz = r.u32()? as usize;
            let mut w = vec![0.0; dim];
            for _ in 0..nnz {
                let i = r.u32()? as usize;
                let v = r.f64()?;
                *w.get_mut(i).ok_or_else(|| ClassifierError::ModelFormat(format!("index {i} out of range")))? = v;
            }
            weights.push(w);
        }
        if r.pos != bytes.len() {
            return Err(ClassifierError::ModelFormat("trailing bytes".into()));
        }
        Ok(Self { config, version, weights, bias })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ClassifierError::ModelFormat("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn check_classes(labels: impl Iterator<Item = ClassLabel>, what: &str) -> Result<(), ClassifierError> {
    let mut seen = [false; 3];
    labels.for_each(|l| seen[l.index()] = true);
    let missing: Vec<_> =
        ClassLabel::ALL.iter().filter(|l| !seen[l.index()]).map(|l| l.as_str()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ClassifierError::DegenerateCorpus(format!("{what} lacks {}", missing.join(", "))))
    }
}

/// Fits the model on `corpus`, holding out `train.holdout_fraction` of it
/// (chosen by a seeded shuffle) for evaluation.
pub fn train(
    corpus: &[(Sentence, ClassLabel)],
    features: FeatureConfig,
    train: TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    let texts: Vec<(&str, ClassLabel)> = corpus.iter().map(|(s, l)| (s.feature_text.as_str(), *l)).collect();
    train_texts(&texts, features, train)
}

pub fn train_texts(
    corpus: &[(&str, ClassLabel)],
    features: FeatureConfig,
    train: TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    if corpus.is_empty() {
        return Err(ClassifierError::DegenerateCorpus("corpus is empty".into()));
    }
    check_classes(corpus.iter().map(|(_, l)| *l), "corpus")?;

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let holdout_size = ((corpus.len() as f64) * train.holdout_fraction.clamp(0.0, 0.9)).round() as usize;
    let (held, fit) = order.split_at(holdout_size);
    check_classes(fit.iter().map(|&i| corpus[i].1), "training split")?;

    let vectors: Vec<SparseVector> = corpus.iter().map(|(t, _)| featurize_text(t, &features)).collect();
    let mut model = ClassifierModel::zeros(features);
    let mut fit_order = fit.to_vec();
    for epoch in 0..train.epochs {
        let lr = train.learning_rate / (1.0 + train.decay * epoch as f64);
        fit_order.shuffle(&mut rng);
        for &i in &fit_order {
            let x = &vectors[i];
            let p = softmax(model.scores(x));
            let gold = corpus[i].1.index();
            for (c, pc) in p.iter().enumerate() {
                let g = pc - if c == gold { 1.0 } else { 0.0 };
                if g == 0.0 {
                    continue;
                }
                let w = &mut model.weights[c];
                for &(j, v) in &x.entries {
                    w[j as usize] -= lr * g * v;
                }
                model.bias[c] -= lr * g;
            }
        }
    }

    let accuracy = |idx: &[usize]| -> f64 {
        let correct = idx
            .iter()
            .filter(|&&i| model.predict_vector(&vectors[i]).label == corpus[i].1)
            .count();
        correct as f64 / idx.len() as f64
    };
    let train_accuracy = accuracy(fit);
    let holdout_accuracy = (!held.is_empty()).then(|| accuracy(held));
    Ok(TrainOutcome { train_size: fit.len(), train_accuracy, holdout_size: held.len(), holdout_accuracy, model })
}

/// Predicts after checking the model was trained with `runtime` features.
pub fn predict(
    model: &ClassifierModel,
    runtime: &FeatureConfig,
    sentence: &Sentence,
) -> Result<SentenceClass, ClassifierError> {
    model.ensure_compatible(runtime)?;
    Ok(model.predict(sentence))
}
