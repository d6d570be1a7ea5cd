#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use posologie_core::classifier::{train, TrainOutcome};
use posologie_core::corpus::{generate, noisify_corpus, training_pairs, Templates};
use posologie_core::pipeline::ExtractorConfig;
use posologie_core::{
    AnnotatedSentence, CorpusSpec, DrugLexicon, Extractor, FeatureConfig, PatternSet, Stopwords, TrainConfig,
};

pub const EVAL_SEED: u64 = 2024;
pub const NOISE_SEED: u64 = 2025;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn desk_corpus() -> Vec<AnnotatedSentence> {
    generate(&CorpusSpec::default(), &Templates::french(), &DrugLexicon::french_sample()).unwrap()
}

/// Classifier trained once per test binary on the default desk corpus.
pub fn trained() -> &'static (TrainOutcome, Duration) {
    static CELL: OnceLock<(TrainOutcome, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let pairs = training_pairs(&desk_corpus(), &Stopwords::french());
        let out = train(&pairs, FeatureConfig::default(), TrainConfig::default()).unwrap();
        (out, start.elapsed())
    })
}

pub fn extractor(config: ExtractorConfig) -> Extractor {
    Extractor::new(
        trained().0.model.clone(),
        &FeatureConfig::default(),
        Arc::new(DrugLexicon::french_sample()),
        PatternSet::french_default(),
        Stopwords::french(),
        config,
    )
    .unwrap()
}

/// 500 unseen sentences with OCR-style noise at rate 0.05.
pub fn noisy_eval_split() -> Vec<AnnotatedSentence> {
    let spec = CorpusSpec { n_drug: 167, n_posology: 167, n_useless: 166, seed: EVAL_SEED };
    let clean = generate(&spec, &Templates::french(), &DrugLexicon::french_sample()).unwrap();
    noisify_corpus(&clean, 0.05, NOISE_SEED)
}
