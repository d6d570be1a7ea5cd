mod common;

use posologie_core::classifier::{predict, train, ClassifierError, ClassifierModel};
use posologie_core::normalize::Sentence;
use posologie_core::{ClassLabel, FeatureConfig, Stopwords, TrainConfig};

fn sentence(text: &str) -> Sentence {
    Sentence::detached(text, &Stopwords::french()).unwrap()
}

#[test]
fn desk_model_labels_typical_lines() {
    let model = &common::trained().0.model;
    let cases = [
        ("doliprane 1000 mg comprime", ClassLabel::Drug),
        ("1 cp matin et soir pendant 5 jours", ClassLabel::Posology),
        ("docteur jean dupont cardiologue", ClassLabel::Useless),
    ];
    for (text, want) in cases {
        let got = predict(model, &FeatureConfig::default(), &sentence(text)).unwrap();
        assert_eq!(got.label, want, "{text}: {got:?}");
        assert!((got.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn model_file_round_trips() {
    let model = &common::trained().0.model;
    let bytes = model.to_bytes();
    let back = ClassifierModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let s = sentence("amoxicilline 1 g");
    assert_eq!(back.predict(&s), model.predict(&s));
}

#[test]
fn runtime_feature_mismatch_is_refused() {
    let model = &common::trained().0.model;
    let other = FeatureConfig { hash_bits: 12, ..FeatureConfig::default() };
    assert!(matches!(predict(model, &other, &sentence("x y z")), Err(ClassifierError::VersionMismatch { .. })));
}

#[test]
fn missing_class_is_degenerate() {
    let pairs = vec![(sentence("doliprane"), ClassLabel::Drug), (sentence("1 cp le soir"), ClassLabel::Posology)];
    let err = train(&pairs, FeatureConfig::default(), TrainConfig::default()).unwrap_err();
    assert!(matches!(err, ClassifierError::DegenerateCorpus(_)));
}
