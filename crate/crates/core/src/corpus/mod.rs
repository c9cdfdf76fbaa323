//! Labeled contract corpus: loading, validation, persistence and splitting.
//!
//! The dataset file is a UTF-8 CSV with a header row and (at least) the
//! columns `filename, code, label, encoded_label`. Extra columns such as a
//! leading row index are ignored on load; [`save_corpus`] writes exactly
//! the four named columns.

mod split;
pub mod synthetic;

use std::fs::File;
use std::io::{self, Read, Write};
use std::ops::Index;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{UnknownLabel, VulnerabilityLabel, NUM_CLASSES};

pub use split::{stratified_split, DatasetSplit, Partition, SplitEntry, SplitManifest, SplitRatios};

pub const COLUMNS: [&str; 4] = ["filename", "code", "label", "encoded_label"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("dataset contains no contract rows")]
    MissingData,
    #[error("line {line}: missing column `{column}`")]
    SchemaError { line: u64, column: String },
    #[error("line {line}: {source}")]
    LabelError {
        line: u64,
        #[source]
        source: UnknownLabel,
    },
    #[error("line {line}: encoded_label `{found}` does not match label {label} (expected {expected})")]
    EncodingMismatch {
        line: u64,
        label: VulnerabilityLabel,
        found: String,
        expected: u8,
    },
    #[error("line {line}: contract `{filename}` has empty source")]
    EmptySource { line: u64, filename: String },
    #[error("line {line}: malformed CSV: {message}")]
    Malformed { line: u64, message: String },
    #[error("invalid split ratios {ratios:?}: {reason}")]
    InvalidRatios { ratios: [f64; 3], reason: String },
    #[error("class {label} has {available} member(s) but must appear in {required} non-empty partition(s)")]
    DegenerateClass {
        label: VulnerabilityLabel,
        available: usize,
        required: usize,
    },
    #[error("split manifest does not match corpus: {0}")]
    ManifestMismatch(String),
    #[error("split manifest is not valid JSON: {0}")]
    ManifestFormat(#[from] serde_json::Error),
}

/// One labeled Solidity source unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub filename: String,
    pub source: String,
    pub label: VulnerabilityLabel,
}

impl Contract {
    pub fn new(filename: impl Into<String>, source: impl Into<String>, label: VulnerabilityLabel) -> Self {
        Self { filename: filename.into(), source: source.into(), label }
    }

    pub fn encoded_label(&self) -> u8 {
        self.label.encoding()
    }
}

/// Per-class counts indexed by [`VulnerabilityLabel`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VulnerabilityLabel, usize)> + '_ {
        VulnerabilityLabel::ALL.into_iter().map(move |l| (l, self.0[l.index()]))
    }
}

impl Index<VulnerabilityLabel> for ClassCounts {
    type Output = usize;

    fn index(&self, label: VulnerabilityLabel) -> &usize {
        &self.0[label.index()]
    }
}

/// Ordered collection of contracts with class bookkeeping.
///
/// Each contract remembers its row index in the corpus it was loaded from,
/// so that partitions of a corpus can be traced back to dataset rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    contracts: Vec<Contract>,
    rows: Vec<usize>,
    class_counts: ClassCounts,
}

impl Corpus {
    pub fn new(contracts: Vec<Contract>) -> Self {
        let rows = (0..contracts.len()).collect();
        Self::with_rows(contracts, rows)
    }

    pub(crate) fn with_rows(contracts: Vec<Contract>, rows: Vec<usize>) -> Self {
        debug_assert_eq!(contracts.len(), rows.len());
        let mut counts = [0usize; NUM_CLASSES];
        for c in &contracts {
            counts[c.label.index()] += 1;
        }
        Self { contracts, rows, class_counts: ClassCounts(counts) }
    }

    pub fn contracts(&self) -> &[Contract] {
        &self.contracts
    }

    /// Row index of each contract in the originating corpus.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn class_counts(&self) -> ClassCounts {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    pub fn labels(&self) -> Vec<VulnerabilityLabel> {
        self.contracts.iter().map(|c| c.label).collect()
    }

    /// Sub-corpus made of the given positions (positions, not origin rows).
    pub fn select(&self, positions: &[usize]) -> Corpus {
        let contracts = positions.iter().map(|&p| self.contracts[p].clone()).collect();
        let rows = positions.iter().map(|&p| self.rows[p]).collect();
        Corpus::with_rows(contracts, rows)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Load and validate a dataset file, preserving row order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_corpus(file)
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(CorpusError::MissingData);
    }
    let mut idx = [0usize; 4];
    for (slot, column) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| CorpusError::SchemaError { line: 1, column: column.to_string() })?;
    }

    let mut contracts = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| {
            record
                .get(idx[i])
                .ok_or_else(|| CorpusError::SchemaError { line, column: name.to_string() })
        };
        let filename = field(0, COLUMNS[0])?.to_string();
        let source = field(1, COLUMNS[1])?.to_string();
        let label: VulnerabilityLabel = field(2, COLUMNS[2])?
            .trim()
            .parse()
            .map_err(|source| CorpusError::LabelError { line, source })?;
        let encoded = field(3, COLUMNS[3])?.trim();
        if encoded.parse::<u8>().ok() != Some(label.encoding()) {
            return Err(CorpusError::EncodingMismatch {
                line,
                label,
                found: encoded.to_string(),
                expected: label.encoding(),
            });
        }
        if source.trim().is_empty() {
            return Err(CorpusError::EmptySource { line, filename });
        }
        contracts.push(Contract { filename, source, label });
    }
    if contracts.is_empty() {
        return Err(CorpusError::MissingData);
    }
    Ok(Corpus::new(contracts))
}

fn csv_error(e: csv::Error) -> CorpusError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CorpusError::Io { path: PathBuf::from("<reader>"), source },
        kind => CorpusError::Malformed { line, message: format!("{kind:?}") },
    }
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_corpus(corpus, file).map_err(io_err(path))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> io::Result<()> {
    let mut wtr = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::NonNumeric).from_writer(writer);
    wtr.write_record(COLUMNS)?;
    for c in corpus.contracts() {
        wtr.write_record([
            c.filename.as_str(),
            c.source.as_str(),
            c.label.as_str(),
            &c.encoded_label().to_string(),
        ])?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use VulnerabilityLabel::*;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        read_corpus(text.as_bytes())
    }

    #[test]
    fn four_row_fixture_round_trips() {
        let text = "filename,code,label,encoded_label\n\
            a.sol,\"contract A { function f() { x.delegatecall(msg.data); } }\",DD,0\n\
            b.sol,\"contract B {\n  uint8 x;\n  function f() { x += 1; }\n}\",IO,1\n\
            c.sol,\"contract C { function w() { msg.sender.call.value(1)(); } }\",RE,2\n\
            d.sol,\"contract D { function t() { if (now > 5) {} } }\",TD,3\n";
        let corpus = parse(text).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(corpus.class_counts(), ClassCounts([1, 1, 1, 1]));
        assert_eq!(corpus.contracts()[1].source, "contract B {\n  uint8 x;\n  function f() { x += 1; }\n}");
        assert_eq!(corpus.contracts()[3].label, TD);

        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let again = read_corpus(buf.as_slice()).unwrap();
        for (a, b) in corpus.contracts().iter().zip(again.contracts()) {
            assert_eq!(a.filename, b.filename);
            assert_eq!(a.source, b.source);
            assert_eq!(a.label, b.label);
            assert_eq!(a.encoded_label(), b.encoded_label());
        }
        assert_eq!(again, corpus);
    }

    #[test]
    fn header_only_is_missing_data() {
        assert!(matches!(parse("filename,code,label,encoded_label\n"), Err(CorpusError::MissingData)));
        assert!(matches!(parse(""), Err(CorpusError::MissingData)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = parse("filename,code,label\na.sol,x,RE\n").unwrap_err();
        assert!(matches!(err, CorpusError::SchemaError { ref column, .. } if column == "encoded_label"));
    }

    #[test]
    fn extra_index_column_is_ignored() {
        let c = parse(",filename,code,label,encoded_label\n0,a.sol,x = 1;,RE,2\n").unwrap();
        assert_eq!(c.contracts()[0].label, RE);
    }

    #[test]
    fn unknown_label_reports_line() {
        let err = parse("filename,code,label,encoded_label\na.sol,x,RE,2\nb.sol,y,XX,2\n").unwrap_err();
        match err {
            CorpusError::LabelError { line, source } => {
                assert_eq!(line, 3);
                assert_eq!(source.0, "XX");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encoding_mismatch_detected() {
        let err = parse("filename,code,label,encoded_label\na.sol,x,RE,3\n").unwrap_err();
        assert!(matches!(err, CorpusError::EncodingMismatch { expected: 2, .. }));
        let err = parse("filename,code,label,encoded_label\na.sol,x,RE,two\n").unwrap_err();
        assert!(matches!(err, CorpusError::EncodingMismatch { .. }));
    }

    #[test]
    fn blank_source_rejected() {
        let err = parse("filename,code,label,encoded_label\na.sol,\"  \n \",RE,2\n").unwrap_err();
        assert!(matches!(err, CorpusError::EmptySource { .. }));
    }

    #[test]
    fn select_keeps_origin_rows() {
        let corpus = Corpus::new(vec![
            Contract::new("a", "x", RE),
            Contract::new("b", "y", IO),
            Contract::new("c", "z", RE),
        ]);
        let sub = corpus.select(&[2, 0]);
        assert_eq!(sub.rows(), &[2, 0]);
        assert_eq!(sub.class_counts()[RE], 2);
        assert_eq!(sub.class_counts().total(), sub.len());
    }
}
