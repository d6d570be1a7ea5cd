//! End-to-end extraction from an OCR document to a [`PrescriptionRecord`].

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::classifier::{ClassLabel, ClassifierError, ClassifierModel, FeatureConfig, SentenceClass};
use crate::corpus::{AnnotatedSentence, EntityKind, GoldSpan};
use crate::drug::{detect_drug, split_combined_line, CandidateSource, DrugMention, EquivalenceMarkers, DEFAULT_THRESHOLD};
use crate::normalize::{make_sentence, Sentence, Stopwords};
use crate::ocr::{validate_document, OcrDocument, OcrError};
use crate::pattern::PatternSet;
use crate::posology::{extract_posology, PosologyExtraction};
use crate::relation::{link, LinkConfig, LinkLine, PrescriptionRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ocr(#[from] OcrError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub threshold: f64,
    pub link: LinkConfig,
    /// Drop drug lines that open with an equivalence marker ("ou equivalent")
    /// right after another drug line.
    pub dedup_equivalents: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, link: LinkConfig::default(), dedup_equivalents: true }
    }
}

/// What the pipeline found on one line.
#[derive(Debug, Clone)]
pub struct SentenceAnalysis {
    pub sentence: Sentence,
    pub class: SentenceClass,
    pub drug: Option<DrugMention>,
    /// Posology entities; `None` when none were found.
    pub posology: Option<PosologyExtraction>,
}

impl SentenceAnalysis {
    /// Entity spans in raw-text char offsets.
    pub fn spans(&self) -> Vec<GoldSpan> {
        let mut out: Vec<GoldSpan> = self
            .drug
            .iter()
            .map(|d| GoldSpan { kind: EntityKind::Drug, start: d.src_start, end: d.src_end })
            .collect();
        for e in self.posology.iter().flat_map(|p| &p.entities) {
            out.push(GoldSpan { kind: e.kind.into(), start: e.src_start, end: e.src_end });
        }
        out.sort();
        out
    }
}

pub struct Extractor {
    pub stopwords: Stopwords,
    pub patterns: PatternSet,
    pub model: ClassifierModel,
    pub markers: EquivalenceMarkers,
    pub config: ExtractorConfig,
    source: Arc<dyn CandidateSource + Send + Sync>,
}

impl Extractor {
    /// Fails with a version mismatch when `model` was trained with features
    /// other than `features`.
    pub fn new(
        model: ClassifierModel,
        features: &FeatureConfig,
        source: Arc<dyn CandidateSource + Send + Sync>,
        patterns: PatternSet,
        stopwords: Stopwords,
        config: ExtractorConfig,
    ) -> Result<Self, PipelineError> {
        model.ensure_compatible(features)?;
        Ok(Self { stopwords, patterns, model, markers: EquivalenceMarkers::french(), config, source })
    }

    pub fn with_markers(mut self, markers: EquivalenceMarkers) -> Self {
        self.markers = markers;
        self
    }

    pub fn analyze(&self, sentence: Sentence) -> SentenceAnalysis {
        let class = self.model.predict(&sentence);
        let non_empty = |p: PosologyExtraction| (!p.is_empty()).then_some(p);
        let (drug, posology) = match class.label {
            ClassLabel::Drug => match detect_drug(&sentence, self.source.as_ref(), self.config.threshold) {
                Some(m) => {
                    let rest = split_combined_line(&sentence, &m);
                    (Some(m), non_empty(extract_posology(&rest, &self.patterns)))
                }
                None => (None, None),
            },
            ClassLabel::Posology => (None, non_empty(extract_posology(&sentence, &self.patterns))),
            ClassLabel::Useless => (None, None),
        };
        SentenceAnalysis { sentence, class, drug, posology }
    }

    /// Runs the line-level steps on free text, for evaluation against an
    /// annotated corpus. Lines the normalizer drops yield no spans.
    pub fn annotate(&self, text: &str) -> AnnotatedSentence {
        match Sentence::detached(text, &self.stopwords) {
            Some(s) => {
                let a = self.analyze(s);
                AnnotatedSentence { text: text.to_string(), label: a.class.label, spans: a.spans() }
            }
            None => AnnotatedSentence { text: text.to_string(), label: ClassLabel::Useless, spans: Vec::new() },
        }
    }

    pub fn analyze_document(&self, doc: &OcrDocument) -> Vec<SentenceAnalysis> {
        doc.lines.iter().filter_map(|l| make_sentence(l, &self.stopwords)).map(|s| self.analyze(s)).collect()
    }

    pub fn extract(&self, doc: OcrDocument) -> Result<PrescriptionRecord, PipelineError> {
        let doc = validate_document(doc)?;
        let analyses = self.analyze_document(&doc);
        let lines = self.link_lines(&analyses);
        let record = link(&doc.doc_id, &lines, &self.config.link);
        check_partition(&lines, &record)?;
        Ok(record)
    }

    fn link_lines(&self, analyses: &[SentenceAnalysis]) -> Vec<LinkLine> {
        let mut out = Vec::with_capacity(analyses.len());
        // Whether the last line carrying a drug or a posology was a drug.
        let mut after_drug = false;
        for a in analyses {
            let s = &a.sentence;
            let mut line = LinkLine::new(&s.line_id, s.page, s.bbox);
            let is_drug_line = a.class.label == ClassLabel::Drug;
            if is_drug_line && self.config.dedup_equivalents && after_drug && self.markers.starts_sentence(s) {
                out.push(line);
                continue;
            }
            line.drug = a.drug.clone();
            line.posology = a.posology.clone();
            line.unmatched_drug = is_drug_line && a.drug.is_none();
            if line.drug.is_some() {
                after_drug = true;
            } else if line.posology.is_some() {
                after_drug = false;
            }
            out.push(line);
        }
        out
    }
}

fn check_partition(lines: &[LinkLine], record: &PrescriptionRecord) -> Result<(), PipelineError> {
    let mut expected: BTreeMap<&str, usize> = BTreeMap::new();
    for l in lines.iter().filter(|l| l.posology.is_some()) {
        *expected.entry(l.line_id.as_str()).or_default() += 1;
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for id in record.posology_line_ids() {
        *seen.entry(id).or_default() += 1;
    }
    if expected != seen {
        return Err(PipelineError::Invariant(format!(
            "posology lines {expected:?} were not partitioned between drugs and orphans: {seen:?}"
        )));
    }
    Ok(())
}
