use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use scvd_core::corpus::{self, synthetic, ClassCounts, Corpus, SplitManifest};
use scvd_core::digest::sha256_hex;
use scvd_core::evaluation::{self, EvalError, EvaluationReport};
use scvd_core::model::checkpoint::{load_classifier, save_classifier, MANIFEST_FILE};
use scvd_core::model::{self, argmax_label, Classifier, EncodedDataset, ModelKind};
use scvd_core::preprocess::{lex_contract, Vocab};
use scvd_core::training::{self, TrainError};
use scvd_core::VulnerabilityLabel;

use crate::config::RunConfigFile;
use crate::{Cli, Command, Format, EXIT_INPUT, EXIT_MISMATCH, EXIT_TRAINING};

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
pub const SPLIT_MANIFEST_FILE: &str = "split_manifest.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const INGEST_SUMMARY_FILE: &str = "ingest_summary.json";
pub const MODEL_DIR: &str = "model";
const SYNTHETIC_PREFIX: &str = "synthetic_";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_INPUT, error)
    }

    fn stage(code: i32, stage: &str, error: impl Into<anyhow::Error>) -> Self {
        Self::new(code, error.into().context(format!("stage `{stage}` failed")))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Several library errors already fold their source into the message.
        let mut shown = String::new();
        for cause in self.error.chain() {
            let text = cause.to_string();
            if shown.ends_with(&text) {
                continue;
            }
            if !shown.is_empty() {
                shown.push_str(": ");
            }
            shown.push_str(&text);
        }
        f.write_str(&shown)
    }
}

/// What a command prints, in both renderings, and its exit status.
#[derive(Debug)]
pub struct Output {
    pub human: String,
    pub structured: Value,
    pub exit_code: i32,
}

impl Output {
    fn ok(human: String, structured: Value) -> Self {
        Self { human, structured, exit_code: 0 }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Human => self.human.clone(),
            Format::Structured => serde_json::to_string_pretty(&self.structured).expect("json") + "\n",
        }
    }
}

fn envelope(command: &str, body: Value) -> Value {
    json!({ "schema_version": OUTPUT_SCHEMA_VERSION, "command": command, "result": body })
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let g = &cli.global;
    let config = match &g.config {
        Some(path) => Some(RunConfigFile::load(path).map_err(CliError::input)?),
        None => None,
    };
    let dataset_arg = |explicit: &Option<PathBuf>| -> Result<PathBuf, CliError> {
        explicit
            .clone()
            .or_else(|| config.as_ref().map(|c| c.dataset.clone()))
            .ok_or_else(|| CliError::input(anyhow!("no dataset given (pass a path or --config)")))
    };
    match &cli.command {
        Command::Ingest { dataset } => cmd_ingest(&dataset_arg(dataset)?, g.out.as_deref()),
        Command::Split { dataset } => {
            let mut cfg = config.clone().unwrap_or_else(|| RunConfigFile::new(PathBuf::new()));
            cfg.dataset = dataset_arg(dataset)?;
            if let Some(seed) = g.seed {
                cfg.set_seed(seed);
            }
            cmd_split(&cfg, g.out.as_deref())
        }
        Command::Train => {
            let mut cfg = config.clone().ok_or_else(|| CliError::input(anyhow!("train needs --config")))?;
            if let Some(seed) = g.seed {
                cfg.set_seed(seed);
            }
            if let Some(out) = &g.out {
                cfg.output_dir = out.clone();
            }
            cmd_train(&cfg)
        }
        Command::Evaluate { checkpoint, split, dataset, partition } => {
            let dataset = dataset_arg(dataset)?;
            cmd_evaluate(checkpoint, split, &dataset, partition, g.out.as_deref())
        }
        Command::Scan { checkpoint, paths, threshold } => cmd_scan(checkpoint, paths, *threshold),
        Command::Compare { runs } => cmd_compare(runs, g.out.as_deref()),
        Command::Synth { path, counts } => {
            let counts: [usize; 4] =
                counts.as_slice().try_into().map_err(|_| CliError::input(anyhow!("--counts needs 4 values")))?;
            cmd_synth(path, ClassCounts(counts), g.seed.unwrap_or(0))
        }
    }
}

fn counts_json(counts: &ClassCounts) -> Value {
    let map: BTreeMap<&str, usize> = counts.iter().map(|(l, n)| (l.as_str(), n)).collect();
    json!(map)
}

fn counts_line(counts: &ClassCounts) -> String {
    counts.iter().map(|(l, n)| format!("{l}={n}")).collect::<Vec<_>>().join(" ")
}

fn is_synthetic(corpus: &Corpus) -> bool {
    !corpus.is_empty() && corpus.contracts().iter().all(|c| c.filename.starts_with(SYNTHETIC_PREFIX))
}

fn write_out(dir: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Serialize)]
struct IngestSummary {
    dataset: String,
    dataset_sha256: String,
    synthetic: bool,
    total: usize,
    class_counts: Value,
}

pub fn cmd_ingest(dataset: &Path, out: Option<&Path>) -> Result<Output, CliError> {
    let corpus = corpus::load_corpus(dataset).map_err(CliError::input)?;
    let bytes = std::fs::read(dataset).map_err(CliError::input)?;
    let counts = corpus.class_counts();
    let summary = IngestSummary {
        dataset: dataset.display().to_string(),
        dataset_sha256: sha256_hex(&bytes),
        synthetic: is_synthetic(&corpus),
        total: counts.total(),
        class_counts: counts_json(&counts),
    };
    let body = serde_json::to_value(&summary).expect("json");
    if let Some(dir) = out {
        write_out(dir, INGEST_SUMMARY_FILE, &serde_json::to_string_pretty(&body).expect("json"))
            .map_err(CliError::input)?;
    }
    let tag = if summary.synthetic { " [synthetic fixture]" } else { "" };
    let human = format!("{}{tag}\ncontracts: {}\nclasses:   {}\n", dataset.display(), summary.total, counts_line(&counts));
    Ok(Output::ok(human, envelope("ingest", body)))
}

pub fn cmd_split(cfg: &RunConfigFile, out: Option<&Path>) -> Result<Output, CliError> {
    let corpus = corpus::load_corpus(&cfg.dataset).map_err(CliError::input)?;
    let split = corpus::stratified_split(&corpus, cfg.split.ratios(), cfg.split.seed).map_err(CliError::input)?;
    let manifest = split.manifest();
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let path = write_out(&dir, SPLIT_MANIFEST_FILE, &manifest.to_json()).map_err(CliError::input)?;
    let parts = [("train", &split.train), ("val", &split.val), ("test", &split.test)];
    let body = json!({
        "manifest": path.display().to_string(),
        "split_hash": split.hash(),
        "seed": split.seed,
        "partitions": parts.iter().map(|(n, c)| (n.to_string(), counts_json(&c.class_counts()))).collect::<BTreeMap<_, _>>(),
    });
    let mut human = format!("split hash {}\n", split.hash());
    for (name, part) in parts {
        human.push_str(&format!("{name:>5}: {:>5}  {}\n", part.len(), counts_line(&part.class_counts())));
    }
    human.push_str(&format!("manifest written to {}\n", path.display()));
    Ok(Output::ok(human, envelope("split", body)))
}

fn build_classifier(cfg: &RunConfigFile, train: &Corpus) -> anyhow::Result<Classifier> {
    let model_cfg = cfg.resolved_model();
    Ok(match model_cfg.kind {
        ModelKind::RecurrentBaseline => {
            let seqs: Vec<_> = train.contracts().par_iter().map(|c| lex_contract(&c.source, &c.filename).0).collect();
            let vocab = Vocab::build(&seqs, cfg.preprocess.max_vocab_size, cfg.preprocess.min_freq);
            model::build_recurrent_classifier(&model_cfg, vocab)?
        }
        ModelKind::TransformerFinetune => model::build_transformer_classifier(&model_cfg)?,
    })
}

#[derive(Serialize)]
struct RunManifest {
    schema_version: u32,
    tool_version: &'static str,
    dataset: String,
    dataset_sha256: String,
    synthetic_dataset: bool,
    split_hash: String,
    split_seed: u64,
    model_seed: u64,
    train_seed: u64,
    model_kind: ModelKind,
    parameter_count: usize,
    input_vocab_size: usize,
    sizes: BTreeMap<&'static str, usize>,
    config_sha256: String,
    model_hash: String,
    best_epoch: Option<usize>,
    epochs_completed: usize,
}

pub fn cmd_train(cfg: &RunConfigFile) -> Result<Output, CliError> {
    let out = &cfg.output_dir;
    let corpus = corpus::load_corpus(&cfg.dataset).map_err(|e| CliError::stage(EXIT_INPUT, "ingest", e))?;
    let dataset_sha = sha256_hex(&std::fs::read(&cfg.dataset).map_err(CliError::input)?);
    let split = corpus::stratified_split(&corpus, cfg.split.ratios(), cfg.split.seed)
        .map_err(|e| CliError::stage(EXIT_INPUT, "split", e))?;
    let config_text = cfg.to_toml();
    write_out(out, CONFIG_SNAPSHOT_FILE, &config_text).map_err(CliError::input)?;
    write_out(out, SPLIT_MANIFEST_FILE, &split.manifest().to_json()).map_err(CliError::input)?;

    let mut clf = build_classifier(cfg, &split.train).map_err(|e| CliError::stage(EXIT_INPUT, "build", e))?;
    log::info!("{} model with {} parameters", clf.kind().as_str(), clf.parameter_count());
    let train_set = EncodedDataset::from_corpus(&clf, &split.train);
    let val_set = EncodedDataset::from_corpus(&clf, &split.val);
    let test_set = EncodedDataset::from_corpus(&clf, &split.test);

    let run = training::train(&mut clf, &train_set, &val_set, &cfg.train, Some(out)).map_err(|e| match e {
        TrainError::Config(_) => CliError::stage(EXIT_INPUT, "train", e),
        other => CliError::stage(EXIT_TRAINING, "train", other),
    })?;
    let model_manifest =
        save_classifier(&clf, &out.join(MODEL_DIR), &[]).map_err(|e| CliError::stage(EXIT_TRAINING, "save", e))?;

    let mut report = if test_set.is_empty() {
        return Err(CliError::stage(EXIT_INPUT, "evaluate", anyhow!("test partition is empty")));
    } else {
        evaluation::evaluate(&clf, &test_set).map_err(|e| CliError::stage(EXIT_TRAINING, "evaluate", e))?
    };
    report.split_hash = Some(split.hash());
    report.model_hash = Some(model_manifest.content_hash.clone());
    evaluation::emit_report(&report, &run, out).map_err(|e| CliError::stage(EXIT_TRAINING, "report", e))?;

    let manifest = RunManifest {
        schema_version: OUTPUT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        dataset: cfg.dataset.display().to_string(),
        dataset_sha256: dataset_sha,
        synthetic_dataset: is_synthetic(&corpus),
        split_hash: split.hash(),
        split_seed: cfg.split.seed,
        model_seed: cfg.model.seed,
        train_seed: cfg.train.seed,
        model_kind: clf.kind(),
        parameter_count: clf.parameter_count(),
        input_vocab_size: clf.encoder.len(),
        sizes: [("train", train_set.len()), ("val", val_set.len()), ("test", test_set.len())].into_iter().collect(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        model_hash: model_manifest.content_hash,
        best_epoch: run.best_epoch,
        epochs_completed: run.records.len(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("json");
    write_out(out, RUN_MANIFEST_FILE, &manifest_json).map_err(CliError::input)?;

    let mut human = String::new();
    for r in &run.records {
        human.push_str(&format!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  ({:.1}s)\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_clock_secs
        ));
    }
    if let Some(best) = run.best_epoch {
        human.push_str(&format!("best epoch {best}\n"));
    }
    human.push('\n');
    human.push_str(&report.table());
    human.push_str(&format!("\nrun directory: {}\n", out.display()));
    let body = json!({
        "run_dir": out.display().to_string(),
        "manifest": serde_json::from_str::<Value>(&manifest_json).expect("json"),
        "history": run,
        "report": report,
    });
    Ok(Output::ok(human, envelope("train", body)))
}

/// A run directory stands for its saved model.
fn resolve_model_dir(path: &Path) -> PathBuf {
    if !path.join(MANIFEST_FILE).is_file() && path.join(MODEL_DIR).join(MANIFEST_FILE).is_file() {
        path.join(MODEL_DIR)
    } else {
        path.to_path_buf()
    }
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    split_path: &Path,
    dataset: &Path,
    partition: &str,
    out: Option<&Path>,
) -> Result<Output, CliError> {
    let (clf, model_manifest) = load_classifier(&resolve_model_dir(checkpoint)).map_err(CliError::input)?;
    let corpus = corpus::load_corpus(dataset).map_err(CliError::input)?;
    let text = std::fs::read_to_string(split_path)
        .with_context(|| format!("reading {}", split_path.display()))
        .map_err(CliError::input)?;
    let split = SplitManifest::from_json(&text).and_then(|m| m.apply(&corpus)).map_err(CliError::input)?;
    let part = match partition {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => return Err(CliError::input(anyhow!("unknown partition `{other}` (train, val or test)"))),
    };
    let data = EncodedDataset::from_corpus(&clf, part);
    let mut report = evaluation::evaluate(&clf, &data).map_err(|e| match e {
        EvalError::EmptyDataset => CliError::input(e),
        other => CliError::new(1, other),
    })?;
    report.split_hash = Some(split.hash());
    report.model_hash = Some(model_manifest.content_hash);
    if let Some(dir) = out {
        write_out(dir, evaluation::REPORT_JSON, &report.to_json()).map_err(CliError::input)?;
        write_out(dir, evaluation::REPORT_TABLE, &report.table()).map_err(CliError::input)?;
        write_out(dir, evaluation::CONFUSION_CSV, &report.confusion.to_csv()).map_err(CliError::input)?;
    }
    let human = format!("{partition} partition, {} contracts\n\n{}", data.len(), report.table());
    Ok(Output::ok(human, envelope("evaluate", serde_json::to_value(&report).expect("json"))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScanResult {
    Prediction {
        file: String,
        label: VulnerabilityLabel,
        probabilities: BTreeMap<VulnerabilityLabel, f32>,
        /// Top probability below the threshold; a convenience marker, not a
        /// separate class.
        low_confidence: bool,
    },
    Failure {
        file: String,
        error: String,
    },
}

fn collect_sources(paths: &[PathBuf]) -> Vec<Result<PathBuf, (PathBuf, String)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            match std::fs::read_dir(p) {
                Ok(entries) => {
                    for e in entries.flatten() {
                        let path = e.path();
                        if path.is_file() && path.extension().is_some_and(|x| x == "sol") {
                            out.push(Ok(path));
                        }
                    }
                }
                Err(e) => out.push(Err((p.clone(), e.to_string()))),
            }
        } else {
            out.push(Ok(p.clone()));
        }
    }
    out
}

fn scan_one(clf: &Classifier, path: &Path, threshold: f32) -> ScanResult {
    let file = path.display().to_string();
    let source = match std::fs::read(path) {
        Ok(bytes) => match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(_) => return ScanResult::Failure { file, error: "not valid UTF-8".into() },
        },
        Err(e) => return ScanResult::Failure { file, error: e.to_string() },
    };
    if source.trim().is_empty() {
        return ScanResult::Failure { file, error: "empty file".into() };
    }
    let encoded = clf.encode_source(&source);
    if encoded.true_length == 0 {
        return ScanResult::Failure { file, error: "no tokens after comment removal".into() };
    }
    match clf.predict_proba(std::slice::from_ref(&encoded)) {
        Ok(p) => {
            let row = p.row(0);
            let label = argmax_label(row.as_slice().expect("row"));
            ScanResult::Prediction {
                file,
                label,
                probabilities: VulnerabilityLabel::ALL.iter().map(|l| (*l, row[l.index()])).collect(),
                low_confidence: row[label.index()] < threshold,
            }
        }
        Err(e) => ScanResult::Failure { file, error: e.to_string() },
    }
}

pub fn cmd_scan(checkpoint: &Path, paths: &[PathBuf], threshold: f32) -> Result<Output, CliError> {
    let (clf, manifest) = load_classifier(&resolve_model_dir(checkpoint)).map_err(CliError::input)?;
    let mut results: Vec<ScanResult> = collect_sources(paths)
        .par_iter()
        .map(|item| match item {
            Ok(path) => scan_one(&clf, path, threshold),
            Err((path, e)) => ScanResult::Failure { file: path.display().to_string(), error: e.clone() },
        })
        .collect();
    let key = |r: &ScanResult| match r {
        ScanResult::Prediction { file, .. } | ScanResult::Failure { file, .. } => file.clone(),
    };
    results.sort_by_key(key);
    let failures = results.iter().filter(|r| matches!(r, ScanResult::Failure { .. })).count();
    let mut human = String::new();
    for r in &results {
        match r {
            ScanResult::Prediction { file, label, probabilities, low_confidence } => {
                let probs: Vec<String> = probabilities.iter().map(|(l, p)| format!("{l}={p:.3}")).collect();
                let flag = if *low_confidence { "  low-confidence" } else { "" };
                human.push_str(&format!("{file}\t{label}\t{}{flag}\n", probs.join(" ")));
            }
            ScanResult::Failure { file, error } => human.push_str(&format!("{file}\terror: {error}\n")),
        }
    }
    let body = json!({
        "checkpoint": manifest.content_hash,
        "threshold": threshold,
        "failures": failures,
        "results": results,
    });
    Ok(Output { human, structured: envelope("scan", body), exit_code: if failures > 0 { EXIT_INPUT } else { 0 } })
}

pub fn cmd_compare(runs: &[PathBuf], out: Option<&Path>) -> Result<Output, CliError> {
    if runs.len() < 2 {
        return Err(CliError::input(anyhow!("compare needs at least two run directories")));
    }
    let mut reports: Vec<(String, EvaluationReport)> = Vec::new();
    for dir in runs {
        let report = evaluation::load_report(&dir.join(evaluation::REPORT_JSON)).map_err(CliError::input)?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        reports.push((name, report));
    }
    let cmp = evaluation::compare(&reports).map_err(|e| match e {
        evaluation::CompareError::SplitMismatch(_) => CliError::new(EXIT_MISMATCH, e),
        other => CliError::input(other),
    })?;
    let table = cmp.render();
    if let Some(dir) = out {
        write_out(dir, "comparison.txt", &table).map_err(CliError::input)?;
        write_out(dir, "comparison.json", &serde_json::to_string_pretty(&cmp).expect("json")).map_err(CliError::input)?;
    }
    Ok(Output::ok(table, envelope("compare", serde_json::to_value(&cmp).expect("json"))))
}

pub fn cmd_synth(path: &Path, counts: ClassCounts, seed: u64) -> Result<Output, CliError> {
    let corpus = synthetic::generate(counts, seed);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::input)?;
    }
    corpus::save_corpus(&corpus, path).map_err(CliError::input)?;
    let human = format!(
        "wrote {} synthetic contracts to {} ({})\n",
        corpus.len(),
        path.display(),
        counts_line(&corpus.class_counts())
    );
    let body = json!({ "path": path.display().to_string(), "synthetic": true, "total": corpus.len(), "class_counts": counts_json(&corpus.class_counts()) });
    Ok(Output::ok(human, envelope("synth", body)))
}
