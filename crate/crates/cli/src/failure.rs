//! Failures reported as a JSON object on stderr with a fixed exit code.

use std::fmt::Display;
use std::path::Path;

use posologie_core::classifier::ClassifierError;
use posologie_core::corpus::CorpusError;
use posologie_core::drug::LexiconError;
use posologie_core::eval::EvalError;
use posologie_core::ocr::OcrError;
use posologie_core::pattern::PatternError;
use posologie_core::pipeline::PipelineError;
use serde::Serialize;

pub const EXIT_GENERAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl Failure {
    pub fn new(error: &'static str, exit_code: i32, message: impl Display) -> Self {
        Self { error, message: message.to_string(), exit_code }
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        Self::new("Io", EXIT_GENERAL, format!("{}: {e}", path.display()))
    }

    pub fn config(message: impl Display) -> Self {
        Self::new("Config", EXIT_INPUT, message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("failures serialize")
    }
}

impl From<OcrError> for Failure {
    fn from(e: OcrError) -> Self {
        let kind = match e {
            OcrError::Schema(_) => "SchemaError",
            OcrError::Geometry { .. } => "GeometryError",
            OcrError::EmptyDocument => "EmptyDocument",
        };
        Self::new(kind, EXIT_INPUT, e)
    }
}

impl From<ClassifierError> for Failure {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::DegenerateCorpus(_) => Self::new("DegenerateCorpus", EXIT_INPUT, e),
            ClassifierError::VersionMismatch { .. } => Self::new("VersionMismatch", EXIT_RESOURCE, e),
            ClassifierError::ModelFormat(_) => Self::new("ModelFormat", EXIT_RESOURCE, e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ocr(e) => e.into(),
            PipelineError::Classifier(e) => e.into(),
            PipelineError::Invariant(_) => Self::new("InvariantViolation", EXIT_INVARIANT, e),
        }
    }
}

impl From<LexiconError> for Failure {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::File { .. } => Self::new("MissingLexicon", EXIT_RESOURCE, e),
            _ => Self::new("LexiconFormat", EXIT_INPUT, e),
        }
    }
}

impl From<PatternError> for Failure {
    fn from(e: PatternError) -> Self {
        Self::new("PatternFormat", EXIT_INPUT, e)
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => Self::new("Io", EXIT_GENERAL, e),
            CorpusError::LexiconEmpty => Self::new("LexiconFormat", EXIT_INPUT, e),
            _ => Self::new("CorpusFormat", EXIT_INPUT, e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Self::new("EvalMismatch", EXIT_INPUT, e)
    }
}
