//! Smart-contract vulnerability classification pipeline.

pub mod corpus;
pub mod digest;
pub mod evaluation;
pub mod label;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod training;

pub use corpus::{load_corpus, stratified_split, Contract, Corpus, CorpusError, DatasetSplit, SplitManifest, SplitRatios};
pub use evaluation::{compare, compute_metrics, confusion, emit_report, evaluate, ConfusionMatrix, EvaluationReport};
pub use label::{VulnerabilityLabel, NUM_CLASSES};
pub use model::{
    build_recurrent_classifier, build_transformer_classifier, Classifier, EncodedDataset, ModelConfig, ModelError,
    ModelKind,
};
pub use preprocess::{EncodedSequence, Vocab, WordPieceTokenizer};
pub use training::{resume, train, TrainConfig, TrainError, TrainingRun};
