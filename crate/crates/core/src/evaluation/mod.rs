//! Classification metrics, confusion matrices, report files and
//! side-by-side model comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{VulnerabilityLabel, NUM_CLASSES};
use crate::model::{Classifier, EncodedDataset, ModelError};
use crate::training::TrainingRun;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const CURVES_CSV: &str = "curves.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("y_true has {y_true} labels but y_pred has {y_pred}")]
    LengthMismatch { y_true: usize, y_pred: usize },
    #[error("no labels to evaluate")]
    EmptyInput,
    #[error("test dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report format: {0}")]
    Format(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("comparison needs at least two reports, got {0}")]
    TooFew(usize),
    #[error("reports were computed on different test splits: {0}")]
    SplitMismatch(String),
}

/// Rows are true classes, columns predictions, both in label order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: VulnerabilityLabel, predicted: VulnerabilityLabel) -> usize {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row_sums(&self) -> [usize; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn column_sums(&self) -> [usize; NUM_CLASSES] {
        std::array::from_fn(|j| self.counts.iter().map(|row| row[j]).sum())
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in VulnerabilityLabel::ALL {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for l in VulnerabilityLabel::ALL {
            out.push_str(l.as_str());
            for c in self.counts[l.index()] {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// Axis order for `per_class` and `confusion`.
    pub labels: [VulnerabilityLabel; NUM_CLASSES],
    pub accuracy: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub confusion: ConfusionMatrix,
    pub test_loss: Option<f64>,
    pub split_hash: Option<String>,
    pub model_hash: Option<String>,
}

impl EvaluationReport {
    pub fn class(&self, label: VulnerabilityLabel) -> &ClassMetrics {
        &self.per_class[label.index()]
    }

    pub fn total(&self) -> usize {
        self.confusion.total()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let report: Self = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(EvalError::Format(format!("unsupported schema version {}", report.schema_version)));
        }
        Ok(report)
    }

    /// Precision / recall / F1 / support table, one row per class followed
    /// by accuracy, macro and weighted averages.
    pub fn table(&self) -> String {
        let mut out = format!("{:>12} {:>9} {:>9} {:>9} {:>9}\n\n", "", "precision", "recall", "f1-score", "support");
        for l in VulnerabilityLabel::ALL {
            let m = self.class(l);
            writeln!(out, "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}", l.as_str(), m.precision, m.recall, m.f1, m.support).unwrap();
        }
        out.push('\n');
        writeln!(out, "{:>12} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total()).unwrap();
        for (name, m) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(out, "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}", name, m.precision, m.recall, m.f1, m.support).unwrap();
        }
        if let Some(loss) = self.test_loss {
            writeln!(out, "\n{:>12} {:.4}", "test loss", loss).unwrap();
        }
        out
    }
}

pub fn confusion(y_true: &[VulnerabilityLabel], y_pred: &[VulnerabilityLabel]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { y_true: y_true.len(), y_pred: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Metrics derived from a confusion matrix. Undefined ratios are 0; the
/// macro row's support is the total count.
pub fn metrics_from_confusion(m: &ConfusionMatrix) -> EvaluationReport {
    let rows = m.row_sums();
    let cols = m.column_sums();
    let total = m.total();
    let per_class: [ClassMetrics; NUM_CLASSES] = std::array::from_fn(|i| {
        let tp = m.counts[i][i];
        let precision = ratio(tp, cols[i]);
        let recall = ratio(tp, rows[i]);
        ClassMetrics { precision, recall, f1: f1(precision, recall), support: rows[i] }
    });
    let k = NUM_CLASSES as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total.max(1) as f64
    };
    let accuracy = ratio(m.trace(), total);
    EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        labels: VulnerabilityLabel::ALL,
        accuracy,
        macro_avg: ClassMetrics {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
            support: total,
        },
        weighted_avg: ClassMetrics {
            precision: weighted(|c| c.precision),
            // Σ n_c · TP_c / n_c collapses to the trace.
            recall: accuracy,
            f1: weighted(|c| c.f1),
            support: total,
        },
        per_class,
        confusion: *m,
        test_loss: None,
        split_hash: None,
        model_hash: None,
    }
}

pub fn compute_metrics(y_true: &[VulnerabilityLabel], y_pred: &[VulnerabilityLabel]) -> Result<EvaluationReport, EvalError> {
    Ok(metrics_from_confusion(&confusion(y_true, y_pred)?))
}

/// Inference over `test` plus the mean cross-entropy as `test_loss`.
pub fn evaluate(clf: &Classifier, test: &EncodedDataset) -> Result<EvaluationReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let scores = clf.score(test)?;
    let mut report = compute_metrics(&test.labels, &scores.predictions())?;
    report.test_loss = Some(scores.mean_loss);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedReport {
    pub report: PathBuf,
    pub table: PathBuf,
    pub curves: PathBuf,
    pub confusion: PathBuf,
}

/// Write the structured report, the text table, the per-epoch curve table
/// and the confusion matrix under `dest`.
pub fn emit_report(report: &EvaluationReport, run: &TrainingRun, dest: &Path) -> Result<EmittedReport, EvalError> {
    std::fs::create_dir_all(dest).map_err(|e| EvalError::Io { path: dest.to_path_buf(), source: e })?;
    let write = |name: &str, text: &str| {
        let path = dest.join(name);
        std::fs::write(&path, text).map_err(|e| EvalError::Io { path: path.clone(), source: e })?;
        Ok::<_, EvalError>(path)
    };
    Ok(EmittedReport {
        report: write(REPORT_JSON, &report.to_json())?,
        table: write(REPORT_TABLE, &report.table())?,
        curves: write(CURVES_CSV, &run.curves_csv())?,
        confusion: write(CONFUSION_CSV, &report.confusion.to_csv())?,
    })
}

pub fn load_report(path: &Path) -> Result<EvaluationReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })?;
    EvaluationReport::from_json(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<f64>,
    /// Indices of the models holding the best value.
    pub best: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<String>,
    pub split_hash: String,
    pub supports: [usize; NUM_CLASSES],
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Text table; the best value in each row carries a `*`.
    pub fn render(&self) -> String {
        let width = self.models.iter().map(|m| m.len()).max().unwrap_or(0).max(8);
        let mut out = format!("{:<18}", "metric");
        for m in &self.models {
            write!(out, " {m:>width$}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:<18}", row.metric).unwrap();
            for (i, v) in row.values.iter().enumerate() {
                let cell = format!("{v:.2}{}", if row.best.contains(&i) { "*" } else { " " });
                write!(out, " {cell:>width$}").unwrap();
            }
            out.push('\n');
        }
        let supports: Vec<String> =
            VulnerabilityLabel::ALL.iter().map(|l| format!("{l}={}", self.supports[l.index()])).collect();
        writeln!(out, "\nsupport: {} (total {})", supports.join(" "), self.supports.iter().sum::<usize>()).unwrap();
        out
    }
}

/// Side-by-side table of named reports computed on the same test split.
pub fn compare(reports: &[(String, EvaluationReport)]) -> Result<Comparison, CompareError> {
    if reports.len() < 2 {
        return Err(CompareError::TooFew(reports.len()));
    }
    let hashes: Vec<&str> = reports.iter().map(|(_, r)| r.split_hash.as_deref().unwrap_or("")).collect();
    if hashes.iter().any(|h| h.is_empty()) {
        return Err(CompareError::SplitMismatch("a report carries no split hash".into()));
    }
    if hashes.iter().any(|h| *h != hashes[0]) {
        let named: Vec<String> = reports.iter().zip(&hashes).map(|((n, _), h)| format!("{n}={h:.12}")).collect();
        return Err(CompareError::SplitMismatch(named.join(", ")));
    }
    let first = &reports[0].1;
    let supports = first.per_class.map(|c| c.support);
    if reports.iter().any(|(_, r)| r.per_class.map(|c| c.support) != supports) {
        return Err(CompareError::SplitMismatch("reports disagree on class supports".into()));
    }
    let mut rows = Vec::new();
    let mut push = |metric: String, get: &dyn Fn(&EvaluationReport) -> f64| {
        let values: Vec<f64> = reports.iter().map(|(_, r)| get(r)).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = values.iter().enumerate().filter(|(_, v)| **v == max).map(|(i, _)| i).collect();
        rows.push(ComparisonRow { metric, values, best });
    };
    for l in VulnerabilityLabel::ALL {
        let i = l.index();
        push(format!("{l} precision"), &|r| r.per_class[i].precision);
        push(format!("{l} recall"), &|r| r.per_class[i].recall);
        push(format!("{l} f1"), &|r| r.per_class[i].f1);
    }
    push("accuracy".into(), &|r| r.accuracy);
    push("macro precision".into(), &|r| r.macro_avg.precision);
    push("macro recall".into(), &|r| r.macro_avg.recall);
    push("macro f1".into(), &|r| r.macro_avg.f1);
    push("weighted precision".into(), &|r| r.weighted_avg.precision);
    push("weighted recall".into(), &|r| r.weighted_avg.recall);
    push("weighted f1".into(), &|r| r.weighted_avg.f1);
    Ok(Comparison {
        models: reports.iter().map(|(n, _)| n.clone()).collect(),
        split_hash: hashes[0].to_string(),
        supports,
        rows,
    })
}
