//! Structured extraction of drugs and posologies from OCR'd French
//! prescriptions.
//!
//! The pipeline reads OCR line geometry ([`ocr`]), normalizes each line into a
//! [`normalize::Sentence`], classifies it as a drug line, a posology line or
//! boilerplate ([`classifier`]), resolves drug names against a local lexicon
//! ([`drug`]), runs the posology token patterns ([`pattern`], [`posology`]) and
//! finally attaches posologies to drugs from their position on the page
//! ([`relation`]). [`pipeline::Extractor`] wires all of it together.

pub mod classifier;
pub mod corpus;
pub mod data;
pub mod drug;
pub mod eval;
pub mod normalize;
pub mod ocr;
pub mod pattern;
pub mod pipeline;
pub mod posology;
pub mod relation;
pub mod similarity;

pub use classifier::{ClassLabel, ClassifierModel, FeatureConfig, SentenceClass, TrainConfig};
pub use drug::{DrugLexicon, DrugMention};
pub use normalize::{Sentence, Stopwords, Token};
pub use ocr::{BoundingBox, OcrDocument, OcrLine};
pub use pattern::{PatternLabel, PatternSet, TokenPattern};
pub use pipeline::Extractor;
pub use posology::{PosologyEntity, PosologyExtraction, PosologyKind};
pub use relation::{LinkConfig, PrescriptionRecord};
pub use corpus::{AnnotatedSentence, CorpusSpec, EntityKind, GoldSpan};
pub use eval::{EvalMode, EvalReport};
