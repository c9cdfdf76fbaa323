use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use scvd_core::corpus::{save_corpus, synthetic, ClassCounts, Contract, Corpus};
use scvd_core::model::checkpoint::save_classifier;
use scvd_core::model::{build_recurrent_classifier, EncodedDataset, ModelConfig, RecurrentConfig};
use scvd_core::preprocess::{lex_contract, Vocab};
use scvd_core::training::{train, TrainConfig};
use scvd_core::VulnerabilityLabel;

fn scvd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scvd")).current_dir(dir).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_config(dir: &Path, name: &str, dataset: &str, output_dir: &str, epochs: usize, seed: u64) {
    let text = format!(
        r#"dataset = "{dataset}"
output_dir = "{output_dir}"
[split]
seed = {seed}
[model]
kind = "recurrent_baseline"
seed = {seed}
[model.recurrent]
embed_dim = 16
conv_filters = 8
recurrent_units = 8
attention_dim = 8
max_len = 64
[train]
epochs = {epochs}
seed = {seed}
"#
    );
    std::fs::write(dir.join(name), text).unwrap();
}

fn synth(dir: &Path, per_class: usize) {
    let c = per_class.to_string();
    let counts = [c.as_str(); 4].join(",");
    assert!(scvd(dir, &["synth", "data.csv", "--counts", &counts]).status.success());
}

#[test]
fn ingest_of_four_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(
        VulnerabilityLabel::ALL.iter().map(|l| Contract::new(format!("{l}.sol"), "contract A { }", *l)).collect(),
    );
    save_corpus(&corpus, dir.path().join("four.csv")).unwrap();
    let out = scvd(dir.path(), &["--format", "structured", "--out", "o", "ingest", "four.csv"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["result"]["total"], 4);
    assert_eq!(v["result"]["synthetic"], false);
    for l in ["DD", "IO", "RE", "TD"] {
        assert_eq!(v["result"]["class_counts"][l], 1);
    }
    assert!(dir.path().join("o/ingest_summary.json").is_file());
}

#[test]
fn ingest_of_missing_path_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = scvd(dir.path(), &["--out", "o", "ingest", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
    assert!(!out.stderr.is_empty());
}

#[test]
fn ingest_reports_bad_label_with_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "filename,code,label,encoded_label\na.sol,x,RE,2\nb.sol,y,XX,9\n").unwrap();
    let out = scvd(dir.path(), &["ingest", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn synthetic_fixture_is_labeled() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let out = scvd(dir.path(), &["ingest", "data.csv"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("synthetic"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(scvd(dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(scvd(dir.path(), &["compare", "only_one"]).status.code(), Some(2));
    assert_eq!(scvd(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn split_honours_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10);
    let a = json(&scvd(dir.path(), &["--format", "structured", "--seed", "1", "--out", "a", "split", "data.csv"]));
    let b = json(&scvd(dir.path(), &["--format", "structured", "--seed", "1", "--out", "b", "split", "data.csv"]));
    let c = json(&scvd(dir.path(), &["--format", "structured", "--seed", "2", "--out", "c", "split", "data.csv"]));
    assert_eq!(a["result"]["split_hash"], b["result"]["split_hash"]);
    assert_ne!(a["result"]["split_hash"], c["result"]["split_hash"]);
    assert_eq!(a["result"]["partitions"]["test"]["RE"], 1);
}

#[test]
fn train_twice_is_reproducible_and_compare_checks_splits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 10);
    write_config(d, "a.toml", "data.csv", "run_a", 2, 5);
    write_config(d, "b.toml", "data.csv", "run_b", 2, 5);
    write_config(d, "c.toml", "data.csv", "run_c", 2, 6);
    for cfg in ["a.toml", "b.toml", "c.toml"] {
        let out = scvd(d, &["--config", cfg, "train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &str| std::fs::read_to_string(d.join(p)).unwrap();
    assert_eq!(read("run_a/split_manifest.json"), read("run_b/split_manifest.json"));
    assert_eq!(read("run_a/report.json"), read("run_b/report.json"));
    assert_eq!(read("run_a/curves.csv").lines().count(), 3);
    for f in ["run_manifest.json", "config.toml", "confusion.csv", "report.txt", "model/manifest.json", "checkpoints/best/manifest.json"] {
        assert!(d.join("run_a").join(f).is_file(), "{f}");
    }

    let same = scvd(d, &["--format", "structured", "compare", "run_a", "run_b"]);
    assert!(same.status.success());
    assert_eq!(json(&same)["result"]["models"].as_array().unwrap().len(), 2);
    assert_eq!(scvd(d, &["compare", "run_a", "run_c"]).status.code(), Some(3));

    let eval = scvd(
        d,
        &["--format", "structured", "evaluate", "--checkpoint", "run_a", "--split", "run_a/split_manifest.json", "--dataset", "data.csv"],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let report: Value = serde_json::from_str(&read("run_a/report.json")).unwrap();
    assert_eq!(json(&eval)["result"]["accuracy"], report["accuracy"]);
}

#[test]
fn zero_epochs_evaluates_the_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 5);
    write_config(dir.path(), "z.toml", "data.csv", "run", 0, 1);
    let out = scvd(dir.path(), &["--config", "z.toml", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("run/curves.csv")).unwrap().lines().count(), 1);
    assert!(dir.path().join("run/report.json").is_file());
}

#[test]
fn train_names_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 5);
    let text = "dataset = \"data.csv\"\n[model]\nkind = \"transformer_finetune\"\n[model.transformer]\ncheckpoint_name = \"no-such-model\"\n";
    std::fs::write(dir.path().join("t.toml"), text).unwrap();
    let out = scvd(dir.path(), &["--config", "t.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("build"));
}

#[test]
fn scan_predicts_overfit_label_and_isolates_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = synthetic::generate(ClassCounts([1, 1, 1, 1]), 8);
    let re_pos = corpus.labels().iter().position(|l| *l == VulnerabilityLabel::RE).unwrap();
    let re = corpus.select(&[re_pos]);
    let seqs: Vec<_> = corpus.contracts().iter().map(|c| lex_contract(&c.source, "").0).collect();
    let cfg = RecurrentConfig { embed_dim: 16, conv_filters: 16, conv_kernel: 3, recurrent_units: 12, attention_dim: 12, dropout: 0.1, max_len: 96 };
    let mut clf = build_recurrent_classifier(&ModelConfig::recurrent(cfg, 2), Vocab::build(&seqs, 2000, 1)).unwrap();
    let data = EncodedDataset::from_corpus(&clf, &re);
    let tc = TrainConfig { epochs: 30, batch_size: 1, learning_rate: Some(1e-2), seed: 1, ..TrainConfig::default() };
    train(&mut clf, &data, &data, &tc, None).unwrap();
    save_classifier(&clf, &d.join("ckpt"), &[]).unwrap();

    let src = d.join("src");
    std::fs::create_dir(&src).unwrap();
    std::fs::write(src.join("b_target.sol"), &re.contracts()[0].source).unwrap();
    std::fs::write(src.join("a_other.sol"), &corpus.contracts()[(re_pos + 1) % 4].source).unwrap();
    std::fs::write(src.join("c_empty.sol"), "").unwrap();
    std::fs::write(src.join("notes.txt"), "ignored").unwrap();

    let out = scvd(d, &["--format", "structured", "scan", "--checkpoint", "ckpt", "src"]);
    assert_eq!(out.status.code(), Some(2));
    let results = json(&out)["result"]["results"].as_array().unwrap().clone();
    let files: Vec<&str> = results.iter().map(|r| r["file"].as_str().unwrap()).collect();
    assert_eq!(files.len(), 3);
    assert!(files.windows(2).all(|w| w[0] < w[1]));
    assert!(results[2]["error"].as_str().unwrap().contains("empty"));
    assert_eq!(results[1]["label"], "RE");
    for r in &results[..2] {
        let sum: f64 = r["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
