//! Run configuration: an optional TOML file, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use posologie_core::drug::DEFAULT_THRESHOLD;
use posologie_core::{FeatureConfig, LinkConfig, TrainConfig};
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lexicon: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub link: LinkSection,
    pub features: FeatureSection,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub drug_gap_factor: Option<f64>,
    pub section_gap_factor: Option<f64>,
    pub overlap_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub ngram_min: Option<u32>,
    pub ngram_max: Option<u32>,
    pub hash_bits: Option<u32>,
    pub word_unigrams: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub decay: Option<f64>,
    pub holdout_fraction: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn link_config(&self) -> Result<LinkConfig, Failure> {
        let d = LinkConfig::default();
        let c = LinkConfig {
            drug_gap_factor: self.link.drug_gap_factor.unwrap_or(d.drug_gap_factor),
            section_gap_factor: self.link.section_gap_factor.unwrap_or(d.section_gap_factor),
            overlap_fraction: self.link.overlap_fraction.unwrap_or(d.overlap_fraction),
        };
        c.validate().map_err(Failure::config)?;
        Ok(c)
    }

    pub fn feature_config(&self) -> Result<FeatureConfig, Failure> {
        let d = FeatureConfig::default();
        let f = &self.features;
        let c = FeatureConfig {
            ngram_min: f.ngram_min.unwrap_or(d.ngram_min),
            ngram_max: f.ngram_max.unwrap_or(d.ngram_max),
            hash_bits: f.hash_bits.unwrap_or(d.hash_bits),
            word_unigrams: f.word_unigrams.unwrap_or(d.word_unigrams),
        };
        if c.ngram_min == 0 || c.ngram_min > c.ngram_max || !(4..=24).contains(&c.hash_bits) {
            return Err(Failure::config(format!("invalid feature config {c:?}")));
        }
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            decay: t.decay.unwrap_or(d.decay),
            seed: self.seed.unwrap_or(d.seed),
            holdout_fraction: t.holdout_fraction.unwrap_or(d.holdout_fraction),
        }
    }
}
