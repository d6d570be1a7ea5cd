use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_posologie");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Desk-scale corpus and model built once through the CLI itself.
fn workspace() -> &'static (tempfile::TempDir, PathBuf) {
    static CELL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let model = dir.path().join("model.bin");
        ok(&["gen-corpus", "--out", s(&corpus)]);
        ok(&["train", "--input", s(&corpus), "--out", s(&model)]);
        (dir, model)
    })
}

fn model() -> &'static str {
    s(&workspace().1)
}

fn error_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr holds one JSON error object")
}

#[test]
fn five_line_fixture_end_to_end() {
    let out = ok(&["extract", "--model", model(), "--input", s(&fixture("five_lines.json"))]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let drugs = r["drugs"].as_array().unwrap();
    assert_eq!(drugs.len(), 2);
    let posologies: Vec<Vec<&str>> = drugs
        .iter()
        .map(|d| d["posologies"].as_array().unwrap().iter().map(|p| p["line_id"].as_str().unwrap()).collect())
        .collect();
    assert_eq!(posologies, vec![vec!["P1", "P2"], vec!["P3"]]);
    assert!(r["orphans"].as_array().unwrap().is_empty());
    assert!(out.stderr.is_empty());

    let table = ok(&["extract", "--model", model(), "--input", s(&fixture("five_lines.json")), "--format", "table"]);
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.contains("DOLIPRANE 1000 mg") && table.contains("SPASFON 80 mg") && table.contains("pendant 5 jours"));
}

#[test]
fn extract_is_deterministic_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = [fixture("five_lines.json"), fixture("figure_prescription.json")];
    let args = |jobs: &str| {
        let mut a = vec!["extract", "--model", model(), "--jobs", jobs, "--input"];
        a.extend(inputs.iter().map(|p| s(p)));
        ok(&a).stdout
    };
    let one = args("1");
    assert_eq!(one, args("2"));
    let records: Vec<Value> = serde_json::from_slice(&one).unwrap();
    assert_eq!(records.len(), 2);

    let out = dir.path().join("records");
    let mut a = vec!["extract", "--model", model(), "--out", s(&out), "--input"];
    a.extend(inputs.iter().map(|p| s(p)));
    ok(&a);
    let single = ok(&["extract", "--model", model(), "--input", s(&inputs[1])]).stdout;
    assert_eq!(std::fs::read(out.join("figure_prescription.record.json")).unwrap(), single);
}

#[test]
fn keep_equivalents_changes_the_figure_record() {
    let input = fixture("figure_prescription.json");
    let count = |extra: &[&str]| {
        let mut a = vec!["extract", "--model", model(), "--input", s(&input)];
        a.extend(extra);
        let r: Value = serde_json::from_slice(&ok(&a).stdout).unwrap();
        r["drugs"].as_array().unwrap().len()
    };
    assert_eq!(count(&["--keep-equivalents"]), 7);
    assert_eq!(count(&[]), 6);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"doc_id":"e","pages":1,"lines":[]}"#).unwrap();
    let out = run(&["extract", "--model", model(), "--input", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "EmptyDocument");
    assert!(out.stdout.is_empty());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"doc_id\": 3}").unwrap();
    assert_eq!(run(&["extract", "--model", model(), "--input", s(&bad)]).status.code(), Some(2));

    let five = fixture("five_lines.json");
    let missing = dir.path().join("missing.bin");
    let out = run(&["extract", "--model", s(&missing), "--input", s(&five)]);
    assert_eq!((out.status.code(), error_of(&out)["error"].as_str()), (Some(3), Some("MissingModel")));
    let out = run(&["extract", "--input", s(&five)]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["extract", "--model", model(), "--lexicon", s(&dir.path().join("no.csv")), "--input", s(&five)]);
    assert_eq!((out.status.code(), error_of(&out)["error"].as_str()), (Some(3), Some("MissingLexicon")));

    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(run(&["extract", "--model", s(&garbage), "--input", s(&five)]).status.code(), Some(3));
}

#[test]
fn gen_corpus_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let args = |out: &Path| {
        ok(&["gen-corpus", "--n-drug", "10", "--n-posology", "10", "--n-useless", "10", "--seed", "1", "--out", s(out)]);
    };
    args(&a);
    args(&b);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let stdout = ok(&["gen-corpus", "--n-drug", "10", "--n-posology", "10", "--n-useless", "10", "--seed", "1"]).stdout;
    assert_eq!(stdout, text.as_bytes());
}

#[test]
fn gen_corpus_noise_stays_within_the_edit_bound() {
    let base = ["gen-corpus", "--n-drug", "20", "--n-posology", "20", "--n-useless", "20", "--seed", "5"];
    let clean = ok(&base).stdout;
    let mut noisy_args = base.to_vec();
    noisy_args.extend(["--noise", "0.1"]);
    let noisy = ok(&noisy_args).stdout;
    let texts = |b: &[u8]| -> Vec<String> {
        String::from_utf8(b.to_vec())
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["text"].as_str().unwrap().to_string())
            .collect()
    };
    let (clean, noisy) = (texts(&clean), texts(&noisy));
    assert_eq!(clean.len(), noisy.len());
    assert_ne!(clean, noisy);
    for (c, n) in clean.iter().zip(&noisy) {
        let bound = (0.1 * c.chars().count() as f64).ceil() as usize + 2;
        assert!(edit_distance(c, n) <= bound, "{c:?} -> {n:?}");
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut diag = row[0];
        row[0] = i;
        for j in 1..=b.len() {
            let up = row[j];
            row[j] = (row[j] + 1).min(row[j - 1] + 1).min(diag + usize::from(a[i - 1] != b[j - 1]));
            diag = up;
        }
    }
    row[b.len()]
}

#[test]
fn train_reports_metrics_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    ok(&["gen-corpus", "--n-drug", "60", "--n-posology", "60", "--n-useless", "60", "--seed", "3", "--out", s(&corpus)]);
    let m1 = dir.path().join("m1.bin");
    let m2 = dir.path().join("m2.bin");
    let out = ok(&["train", "--input", s(&corpus), "--out", s(&m1), "--epochs", "20", "--seed", "7"]);
    ok(&["train", "--input", s(&corpus), "--out", s(&m2), "--epochs", "20", "--seed", "7"]);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert!(out.stdout.is_empty());
    let metrics: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(metrics["holdout_size"], 18);
    assert!(metrics["holdout_accuracy"].as_f64().unwrap() > 0.5);

    let one_class = dir.path().join("one.jsonl");
    ok(&["gen-corpus", "--n-drug", "20", "--n-posology", "0", "--n-useless", "0", "--out", s(&one_class)]);
    let out = run(&["train", "--input", s(&one_class), "--out", s(&dir.path().join("x.bin"))]);
    assert_eq!((out.status.code(), error_of(&out)["error"].as_str()), (Some(2), Some("DegenerateCorpus")));
}

#[test]
fn eval_modes_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    ok(&["gen-corpus", "--n-drug", "30", "--n-posology", "30", "--n-useless", "30", "--seed", "11", "--out", s(&gold)]);
    let out = ok(&["eval", "--gold", s(&gold), "--predictions", s(&gold)]);
    let both: Value = serde_json::from_slice(&out.stdout).unwrap();
    for mode in ["exact_span", "token"] {
        let r = &both[mode];
        assert_eq!(r["overall"]["f1"], 1.0, "{mode}");
        for label in ["DRUG", "DOSE", "FREQUENCY", "DURATION", "COMMENT"] {
            assert_eq!(r["per_label"][label]["precision"], 1.0);
        }
    }
    let single = ok(&["eval", "--gold", s(&gold), "--predictions", s(&gold), "--mode", "token"]);
    let r: Value = serde_json::from_slice(&single.stdout).unwrap();
    assert_eq!(r["mode"], "TOKEN");

    let end_to_end = ok(&["eval", "--gold", s(&gold), "--model", model(), "--format", "table"]);
    let table = String::from_utf8(end_to_end.stdout).unwrap();
    assert!(table.contains("mode: exact span") && table.contains("mode: token") && table.contains("F-measure"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, format!("model = {:?}\nthreshold = 1.0\n", model())).unwrap();
    let input = fixture("five_lines.json");
    let strict = ok(&["extract", "--config", s(&config), "--input", s(&input)]);
    let r: Value = serde_json::from_slice(&strict.stdout).unwrap();
    assert_eq!(r["drugs"].as_array().unwrap().len(), 2);
    let impossible = ok(&["extract", "--config", s(&config), "--threshold", "1.0", "--input", s(&input)]);
    assert_eq!(impossible.stdout, strict.stdout);

    std::fs::write(&config, format!("model = {:?}\n[link]\ndrug_gap_factor = 0.1\nsection_gap_factor = 0.1\n", model())).unwrap();
    let tight: Value = serde_json::from_slice(&ok(&["extract", "--config", s(&config), "--input", s(&input)]).stdout).unwrap();
    assert_eq!(tight["orphans"].as_array().unwrap().len(), 2);

    std::fs::write(&config, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["extract", "--config", s(&config), "--input", s(&input)]).status.code(), Some(2));
}

#[test]
fn lexicon_check_reports_entries_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    let lexicon = dir.path().join("lex.csv");
    std::fs::write(&lexicon, "id,name\nX1,DOLIPRANE 500 mg\nX2,\"Doliprane 500 mg\"\nX3,SPASFON 80 mg\n").unwrap();
    let out = ok(&["lexicon-check", "--lexicon", s(&lexicon), "--query", "spasfon 80 mg", "--query", "rien"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["entries"], 3);
    assert_eq!(r["shared_normalized_names"][0]["drug_ids"], serde_json::json!(["X1", "X2"]));
    assert_eq!(r["queries"][0]["drug_id"], "X3");
    assert_eq!(r["queries"][1]["drug_id"], Value::Null);

    std::fs::write(&lexicon, "id,name\nX1,A\nX1,B\n").unwrap();
    assert_eq!(run(&["lexicon-check", "--lexicon", s(&lexicon)]).status.code(), Some(2));
}
