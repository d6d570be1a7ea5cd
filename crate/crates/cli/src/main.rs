//! `posologie`: drug and posology extraction from OCR'd prescriptions.
//!
//! Data goes to stdout (or `--out`); diagnostics and errors go to stderr,
//! errors as a single JSON object. Exit codes: 2 for invalid input, 3 for a
//! missing or unusable model or lexicon, 4 for an internal invariant breach.

mod config;
mod failure;

use std::fmt::Write as _;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use posologie_core::classifier::train;
use posologie_core::corpus::{self, generate, noisify_corpus, read_jsonl, training_pairs, write_jsonl, Templates};
use posologie_core::drug::detect_drug;
use posologie_core::eval::score;
use posologie_core::ocr::parse_ocr_document;
use posologie_core::pipeline::ExtractorConfig;
use posologie_core::{
    AnnotatedSentence, ClassifierModel, CorpusSpec, DrugLexicon, EvalMode, EvalReport, Extractor, PatternSet,
    PrescriptionRecord, Sentence, Stopwords,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_GENERAL, EXIT_RESOURCE};

#[derive(Parser)]
#[command(name = "posologie", version, about = "Extract drugs and posologies from OCR'd French prescriptions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a prescription record from one or more OCR JSON documents.
    Extract(ExtractArgs),
    /// Generate a synthetic annotated corpus as JSONL.
    GenCorpus(GenCorpusArgs),
    /// Train the sentence classifier on an annotated JSONL corpus.
    Train(TrainArgs),
    /// Score predicted entity spans against a gold JSONL corpus.
    Eval(EvalArgs),
    /// Validate a drug lexicon and optionally resolve sample lines.
    LexiconCheck(LexiconCheckArgs),
}

#[derive(Args)]
struct Resources {
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Drug lexicon CSV (`id,name`); the bundled sample by default.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Posology pattern JSON; the bundled French set by default.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Classifier model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Minimum drug similarity score.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Resources {
    fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        let or = |flag: &Option<PathBuf>, file: &mut Option<PathBuf>| {
            if flag.is_some() {
                file.clone_from(flag);
            }
        };
        or(&self.lexicon, &mut c.lexicon);
        or(&self.patterns, &mut c.patterns);
        or(&self.stopwords, &mut c.stopwords);
        or(&self.model, &mut c.model);
        c.threshold = self.threshold.or(c.threshold);
        c.seed = self.seed.or(c.seed);
        if !(0.0..=1.0).contains(&c.threshold()) {
            return Err(Failure::config(format!("threshold {} is outside [0, 1]", c.threshold())));
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    ExactSpan,
    Token,
    Both,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    resources: Resources,
    /// OCR JSON documents.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output file, or a directory when several inputs are given.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads for several inputs; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Keep drug lines that only name an equivalent of the previous drug.
    #[arg(long)]
    keep_equivalents: bool,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[command(flatten)]
    resources: Resources,
    #[arg(long, default_value_t = 1500)]
    n_drug: usize,
    #[arg(long, default_value_t = 1500)]
    n_posology: usize,
    #[arg(long, default_value_t = 1500)]
    n_useless: usize,
    /// OCR-style noise rate in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Template JSON; the bundled French templates by default.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    resources: Resources,
    /// Annotated JSONL corpus.
    #[arg(long)]
    input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    resources: Resources,
    /// Gold annotated JSONL corpus.
    #[arg(long)]
    gold: PathBuf,
    /// Predicted JSONL aligned with the gold file. Without it the sentences
    /// are annotated end to end with `--model`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LexiconCheckArgs {
    #[command(flatten)]
    resources: Resources,
    /// Lines to resolve against the lexicon.
    #[arg(long)]
    query: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::LexiconCheck(a) => cmd_lexicon_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code as u8)
        }
    }
}

fn read_resource(path: &Path, kind: &'static str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::new(kind, EXIT_RESOURCE, format!("{}: {e}", path.display())),
        _ => Failure::io(path, e),
    })
}

fn read_text(path: &Path, kind: &'static str) -> Result<String, Failure> {
    String::from_utf8(read_resource(path, kind)?).map_err(|e| Failure::io(path, e))
}

fn write_output(out: Option<&Path>, data: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, data).map_err(|e| Failure::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(data.as_bytes()).map_err(|e| Failure::new("Io", EXIT_GENERAL, e))
        }
    }
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn load_lexicon(c: &RunConfig) -> Result<DrugLexicon, Failure> {
    match &c.lexicon {
        Some(path) => Ok(DrugLexicon::from_csv_str(&read_text(path, "MissingLexicon")?)?),
        None => Ok(DrugLexicon::french_sample()),
    }
}

fn load_stopwords(c: &RunConfig) -> Result<Stopwords, Failure> {
    match &c.stopwords {
        Some(path) => Ok(Stopwords::parse(&read_text(path, "MissingStopwords")?)),
        None => Ok(Stopwords::french()),
    }
}

fn load_extractor(c: &RunConfig, dedup_equivalents: bool) -> Result<Extractor, Failure> {
    let path = c
        .model
        .as_ref()
        .ok_or_else(|| Failure::new("MissingModel", EXIT_RESOURCE, "no model given (--model or config `model`)"))?;
    let model = ClassifierModel::from_bytes(&read_resource(path, "MissingModel")?)?;
    let patterns = match &c.patterns {
        Some(path) => PatternSet::from_json(&read_text(path, "MissingPatterns")?)?,
        None => PatternSet::french_default(),
    };
    let config = ExtractorConfig { threshold: c.threshold(), link: c.link_config()?, dedup_equivalents };
    Ok(Extractor::new(
        model,
        &c.feature_config()?,
        Arc::new(load_lexicon(c)?),
        patterns,
        load_stopwords(c)?,
        config,
    )?)
}

fn extract_file(extractor: &Extractor, path: &Path) -> Result<PrescriptionRecord, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(extractor.extract(parse_ocr_document(&bytes)?)?)
}

fn record_table(r: &PrescriptionRecord) -> String {
    let mut out = String::new();
    writeln!(out, "document {}", r.doc_id).unwrap();
    let entities = |p: &posologie_core::relation::PosologyRecord| {
        p.entities.iter().map(|e| format!("{} \"{}\"", e.kind, e.text)).collect::<Vec<_>>().join(" | ")
    };
    for d in &r.drugs {
        writeln!(out, "{:<10} {}  (score {:.2}, line {})", d.drug_id, d.name, d.score, d.line_id).unwrap();
        for p in &d.posologies {
            writeln!(out, "    {:<8} {}", p.line_id, entities(p)).unwrap();
        }
    }
    for p in &r.orphans {
        writeln!(out, "{:<10} {:<8} {}", "ORPHAN", p.line_id, entities(p)).unwrap();
    }
    for id in &r.unmatched_drug_lines {
        writeln!(out, "{:<10} {id}", "UNMATCHED").unwrap();
    }
    out
}

fn render_record(r: &PrescriptionRecord, format: Format) -> String {
    match format {
        Format::Json => with_newline(r.to_json()),
        Format::Table => record_table(r),
    }
}

fn cmd_extract(a: ExtractArgs) -> Result<(), Failure> {
    let c = a.resources.run_config()?;
    let extractor = load_extractor(&c, !a.keep_equivalents)?;
    if let [input] = a.input.as_slice() {
        let record = extract_file(&extractor, input)?;
        return write_output(a.out.as_deref(), &render_record(&record, a.format));
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build().map_err(Failure::config)?;
    let records: Vec<Result<PrescriptionRecord, Failure>> = pool.install(|| {
        use rayon::prelude::*;
        a.input.par_iter().map(|p| extract_file(&extractor, p)).collect()
    });
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            for (input, r) in a.input.iter().zip(&records) {
                let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let ext = if a.format == Format::Json { "record.json" } else { "record.txt" };
                write_output(Some(&dir.join(format!("{stem}.{ext}"))), &render_record(r, a.format))?;
            }
            Ok(())
        }
        None => {
            let text = match a.format {
                Format::Json => with_newline(serde_json::to_string_pretty(&records).expect("records serialize")),
                Format::Table => records.iter().map(record_table).collect::<Vec<_>>().join("\n"),
            };
            write_output(None, &text)
        }
    }
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<(), Failure> {
    let c = a.resources.run_config()?;
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(Failure::config(format!("noise rate {} is outside [0, 1]", a.noise)));
    }
    let templates = match &a.templates {
        Some(path) => Templates::from_json(&read_text(path, "MissingTemplates")?)?,
        None => Templates::french(),
    };
    let seed = c.seed.unwrap_or(CorpusSpec::default().seed);
    let spec = CorpusSpec { n_drug: a.n_drug, n_posology: a.n_posology, n_useless: a.n_useless, seed };
    let mut sentences = generate(&spec, &templates, &load_lexicon(&c)?)?;
    if a.noise > 0.0 {
        sentences = noisify_corpus(&sentences, a.noise, corpus::derive_seed(seed, u64::MAX, 0));
    }
    let mut buf = Vec::new();
    write_jsonl(&sentences, &mut buf).expect("writing to memory");
    write_output(a.out.as_deref(), std::str::from_utf8(&buf).expect("JSONL is UTF-8"))
}

fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(read_jsonl(BufReader::new(file))?)
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut c = a.resources.run_config()?;
    c.training.epochs = a.epochs.or(c.training.epochs);
    c.training.holdout_fraction = a.holdout.or(c.training.holdout_fraction);
    let corpus = read_corpus(&a.input)?;
    let pairs = training_pairs(&corpus, &load_stopwords(&c)?);
    let start = Instant::now();
    let outcome = train(&pairs, c.feature_config()?, c.train_config())?;
    let seconds = start.elapsed().as_secs_f64();
    std::fs::write(&a.out, outcome.model.to_bytes()).map_err(|e| Failure::io(&a.out, e))?;
    let metrics = json!({
        "model": a.out,
        "version": outcome.model.version,
        "sentences": corpus.len(),
        "train_size": outcome.train_size,
        "train_accuracy": outcome.train_accuracy,
        "holdout_size": outcome.holdout_size,
        "holdout_accuracy": outcome.holdout_accuracy,
        "seconds": seconds,
    });
    eprintln!("{metrics}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let c = a.resources.run_config()?;
    let gold = read_corpus(&a.gold)?;
    let predicted = match &a.predictions {
        Some(path) => read_corpus(path)?,
        None => {
            let extractor = load_extractor(&c, true)?;
            gold.iter().map(|s| extractor.annotate(&s.text)).collect()
        }
    };
    let modes: &[(EvalMode, &str)] = match a.mode {
        ModeArg::ExactSpan => &[(EvalMode::ExactSpan, "exact_span")],
        ModeArg::Token => &[(EvalMode::Token, "token")],
        ModeArg::Both => &[(EvalMode::ExactSpan, "exact_span"), (EvalMode::Token, "token")],
    };
    let reports: Vec<(&str, EvalReport)> =
        modes.iter().map(|&(m, name)| Ok((name, score(&gold, &predicted, m)?))).collect::<Result<_, Failure>>()?;
    let text = match a.format {
        Format::Table => reports.iter().map(|(_, r)| r.to_table()).collect::<Vec<_>>().join("\n"),
        Format::Json if reports.len() == 1 => with_newline(reports[0].1.to_json()),
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|(name, r)| (name.to_string(), serde_json::to_value(r).expect("reports serialize")))
                .collect();
            with_newline(serde_json::to_string_pretty(&map).expect("reports serialize"))
        }
    };
    write_output(a.out.as_deref(), &text)
}

fn cmd_lexicon_check(a: LexiconCheckArgs) -> Result<(), Failure> {
    let c = a.resources.run_config()?;
    let lexicon = load_lexicon(&c)?;
    let stopwords = load_stopwords(&c)?;
    let mut by_name: std::collections::BTreeMap<&str, Vec<&str>> = std::collections::BTreeMap::new();
    for e in lexicon.entries() {
        by_name.entry(e.normalized.as_str()).or_default().push(e.drug_id.as_str());
    }
    let shared: Vec<_> = by_name
        .iter()
        .filter(|(_, ids)| ids.len() > 1)
        .map(|(name, ids)| json!({ "normalized": name, "drug_ids": ids }))
        .collect();
    let queries: Vec<_> = a
        .query
        .iter()
        .map(|q| {
            let mention = Sentence::detached(q, &stopwords).and_then(|s| detect_drug(&s, &lexicon, c.threshold()));
            json!({
                "query": q,
                "drug_id": mention.as_ref().map(|m| &m.drug_id),
                "name": mention.as_ref().and_then(|m| lexicon.get(&m.drug_id)).map(|e| &e.name),
                "score": mention.as_ref().map(|m| m.score),
            })
        })
        .collect();
    let report = json!({
        "entries": lexicon.len(),
        "distinct_normalized_names": by_name.len(),
        "shared_normalized_names": shared,
        "queries": queries,
    });
    write_output(None, &with_newline(serde_json::to_string_pretty(&report).expect("report serializes")))
}
