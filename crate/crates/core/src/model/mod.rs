//! Classifier architectures, input encoders and checkpoint formats.

pub mod checkpoint;
pub mod gradcheck;
pub mod hf;
mod recurrent;
mod transformer;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::label::{VulnerabilityLabel, NUM_CLASSES};
use crate::nn::{Parameters, Real};
use crate::preprocess::{lex_contract, normalize_source, EncodedSequence, Vocab, WordPieceTokenizer, PAD_ID};

pub use recurrent::RecurrentNet;
pub use transformer::{EncoderArch, EncoderFamily, EncoderLayer, TransformerNet};

/// Environment variable naming a directory that holds pretrained encoder
/// checkpoints by name.
pub const CHECKPOINT_CACHE_ENV: &str = "SCVD_CHECKPOINT_CACHE";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("tokenizer and encoder disagree: {0}")]
    VocabMismatch(String),
    #[error("input {index} has length {found}, model expects {expected}")]
    Shape { index: usize, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RecurrentBaseline,
    TransformerFinetune,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RecurrentBaseline => "recurrent_baseline",
            Self::TransformerFinetune => "transformer_finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentConfig {
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub recurrent_units: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    /// Encoded sequence length fed to the network.
    pub max_len: usize,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            conv_filters: 64,
            conv_kernel: 5,
            recurrent_units: 64,
            attention_dim: 64,
            dropout: 0.3,
            max_len: crate::preprocess::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    /// Directory path, or a name resolved under `$SCVD_CHECKPOINT_CACHE`.
    pub checkpoint_name: String,
    pub max_positions: usize,
    pub head_dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { checkpoint_name: "distilbert-base-uncased".into(), max_positions: 512, head_dropout: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub recurrent: RecurrentConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
}

fn default_num_classes() -> usize {
    NUM_CLASSES
}

impl ModelConfig {
    pub fn recurrent(cfg: RecurrentConfig, seed: u64) -> Self {
        Self {
            kind: ModelKind::RecurrentBaseline,
            num_classes: NUM_CLASSES,
            seed,
            recurrent: cfg,
            transformer: TransformerConfig::default(),
        }
    }

    pub fn transformer(cfg: TransformerConfig, seed: u64) -> Self {
        Self {
            kind: ModelKind::TransformerFinetune,
            num_classes: NUM_CLASSES,
            seed,
            recurrent: RecurrentConfig::default(),
            transformer: cfg,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes)));
        }
        let rate_ok = |p: f64| (0.0..1.0).contains(&p);
        match self.kind {
            ModelKind::RecurrentBaseline => {
                let r = &self.recurrent;
                let dims = [
                    ("embed_dim", r.embed_dim),
                    ("conv_filters", r.conv_filters),
                    ("conv_kernel", r.conv_kernel),
                    ("recurrent_units", r.recurrent_units),
                    ("attention_dim", r.attention_dim),
                    ("max_len", r.max_len),
                ];
                if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
                    return Err(ModelError::Config(format!("{name} must be positive")));
                }
                if !rate_ok(r.dropout) {
                    return Err(ModelError::Config(format!("dropout {} outside [0, 1)", r.dropout)));
                }
            }
            ModelKind::TransformerFinetune => {
                let t = &self.transformer;
                if t.max_positions < 2 {
                    return Err(ModelError::Config("max_positions must be at least 2".into()));
                }
                if !rate_ok(t.head_dropout) {
                    return Err(ModelError::Config(format!("head_dropout {} outside [0, 1)", t.head_dropout)));
                }
                if t.checkpoint_name.is_empty() {
                    return Err(ModelError::Config("checkpoint_name is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// A trainable classifier over token id sequences.
pub trait Network<R: Real>: Parameters<R> + Clone + Send + Sync {
    /// Same architecture with every parameter zero (a gradient buffer).
    fn zeros_like(&self) -> Self;

    fn vocab_size(&self) -> usize;

    /// Class distribution for one unpadded sequence, dropout disabled.
    fn probabilities(&self, tokens: &[u32]) -> [R; NUM_CLASSES];

    /// Weighted cross-entropy of one example; gradients are added into
    /// `grad`. Dropout is active iff `rng` is given.
    fn loss_and_grad(
        &self,
        tokens: &[u32],
        target: usize,
        weight: R,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut Self,
    ) -> (R, [R; NUM_CLASSES]);
}

/// Smallest probability fed to `ln`.
pub fn probability_floor<R: Real>() -> R {
    R::lit(1e-12)
}

/// `-ln p` with `p` clamped from below; NaN stays NaN.
pub fn neg_log<R: Real>(p: R) -> R {
    if p.is_nan() {
        p
    } else {
        -p.max(probability_floor()).ln()
    }
}

/// `(-w ln p[target], w (p - onehot))` for softmax outputs `p`.
pub(crate) fn cross_entropy_grad<R: Real>(probs: &[R; NUM_CLASSES], target: usize, weight: R) -> (R, Array1<R>) {
    let loss = weight * neg_log(probs[target]);
    let mut d = Array1::from_iter(probs.iter().map(|&p| p * weight));
    d[target] -= weight;
    (loss, d)
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputEncoder {
    /// Solidity lexer plus a corpus-built vocabulary.
    Lexer(Vocab),
    /// Subword tokenizer shipped with a pretrained encoder.
    WordPiece(WordPieceTokenizer),
}

impl InputEncoder {
    pub fn len(&self) -> usize {
        match self {
            Self::Lexer(v) => v.len(),
            Self::WordPiece(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pad_id(&self) -> u32 {
        match self {
            Self::Lexer(_) => PAD_ID,
            Self::WordPiece(t) => t.pad_id(),
        }
    }

    pub fn encode(&self, source: &str, max_len: usize) -> EncodedSequence {
        match self {
            Self::Lexer(vocab) => vocab.encode(&lex_contract(source, "").0, max_len),
            Self::WordPiece(tok) => tok.encode(&normalize_source(source).text, max_len),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Recurrent(RecurrentNet<f32>),
    Transformer(TransformerNet<f32>),
}

impl Backbone {
    pub fn parameter_count(&self) -> usize {
        match self {
            Self::Recurrent(n) => n.parameter_count(),
            Self::Transformer(n) => n.parameter_count(),
        }
    }

    pub fn probabilities(&self, tokens: &[u32]) -> [f32; NUM_CLASSES] {
        match self {
            Self::Recurrent(n) => n.probabilities(tokens),
            Self::Transformer(n) => n.probabilities(tokens),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub encoder: InputEncoder,
    pub backbone: Backbone,
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn parameter_count(&self) -> usize {
        self.backbone.parameter_count()
    }

    /// Length every encoded input must have.
    pub fn max_len(&self) -> usize {
        match &self.backbone {
            Backbone::Recurrent(_) => self.config.recurrent.max_len,
            Backbone::Transformer(n) => self.config.transformer.max_positions.min(n.arch.max_positions),
        }
    }

    pub fn encode_source(&self, source: &str) -> EncodedSequence {
        self.encoder.encode(source, self.max_len())
    }

    /// Check that `seq` was encoded for this model.
    pub fn check_input(&self, index: usize, seq: &EncodedSequence) -> Result<(), ModelError> {
        let expected = self.max_len();
        if seq.len() != expected || seq.true_length > seq.len() {
            return Err(ModelError::Shape { index, expected, found: seq.len() });
        }
        Ok(())
    }

    /// Row-stochastic `B × 4` matrix; inference mode.
    pub fn predict_proba(&self, batch: &[EncodedSequence]) -> Result<Array2<f32>, ModelError> {
        for (i, seq) in batch.iter().enumerate() {
            self.check_input(i, seq)?;
        }
        let pad = self.encoder.pad_id();
        let rows: Vec<[f32; NUM_CLASSES]> =
            batch.par_iter().map(|seq| self.backbone.probabilities(effective_tokens(seq, &pad))).collect();
        let mut out = Array2::zeros((batch.len(), NUM_CLASSES));
        for (mut row, p) in out.rows_mut().into_iter().zip(rows) {
            row.assign(&Array1::from(p.to_vec()));
        }
        Ok(out)
    }
}

/// Encoded inputs with their labels, ready for a particular classifier.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedDataset {
    pub inputs: Vec<EncodedSequence>,
    pub labels: Vec<VulnerabilityLabel>,
}

impl EncodedDataset {
    pub fn from_corpus(clf: &Classifier, corpus: &Corpus) -> Self {
        let inputs = corpus.contracts().par_iter().map(|c| clf.encode_source(&c.source)).collect();
        Self { inputs, labels: corpus.labels() }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            inputs: positions.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: positions.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Digest of the ids and labels.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for (seq, label) in self.inputs.iter().zip(&self.labels) {
            bytes.push(label.encoding());
            bytes.extend((seq.true_length as u64).to_le_bytes());
            bytes.extend(seq.ids.iter().flat_map(|id| id.to_le_bytes()));
        }
        crate::digest::sha256_hex(&bytes)
    }
}

/// Inference-mode probabilities plus mean cross-entropy against the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub probabilities: Array2<f32>,
    pub mean_loss: f64,
}

impl Scores {
    pub fn predictions(&self) -> Vec<VulnerabilityLabel> {
        self.probabilities.rows().into_iter().map(|r| argmax_label(r.as_slice().expect("row"))).collect()
    }
}

/// Highest-probability label; ties go to the earliest class.
pub fn argmax_label(p: &[f32]) -> VulnerabilityLabel {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    VulnerabilityLabel::ALL[best]
}

impl Classifier {
    pub fn score(&self, data: &EncodedDataset) -> Result<Scores, ModelError> {
        let probabilities = self.predict_proba(&data.inputs)?;
        let total: f64 = probabilities
            .rows()
            .into_iter()
            .zip(&data.labels)
            .map(|(row, label)| neg_log(row[label.index()]) as f64)
            .sum();
        let mean_loss = if data.is_empty() { 0.0 } else { total / data.len() as f64 };
        Ok(Scores { probabilities, mean_loss })
    }
}

/// Unpadded prefix of `seq`; a fully padded sequence keeps one pad token so
/// every network sees at least one position.
pub fn effective_tokens<'a>(seq: &'a EncodedSequence, pad: &'a u32) -> &'a [u32] {
    if seq.true_length == 0 {
        std::slice::from_ref(pad)
    } else {
        seq.tokens()
    }
}

pub fn build_recurrent_classifier(config: &ModelConfig, vocab: Vocab) -> Result<Classifier, ModelError> {
    if config.kind != ModelKind::RecurrentBaseline {
        return Err(ModelError::Config(format!("expected recurrent_baseline, got {}", config.kind.as_str())));
    }
    config.validate()?;
    if vocab.len() < 2 {
        return Err(ModelError::Config("vocabulary must contain the pad and unk entries".into()));
    }
    let net = RecurrentNet::init(&config.recurrent, vocab.len(), config.seed);
    Ok(Classifier { config: config.clone(), encoder: InputEncoder::Lexer(vocab), backbone: Backbone::Recurrent(net) })
}

/// Load the pretrained encoder named by the config and attach a freshly
/// initialised 4-way head.
pub fn build_transformer_classifier(config: &ModelConfig) -> Result<Classifier, ModelError> {
    if config.kind != ModelKind::TransformerFinetune {
        return Err(ModelError::Config(format!("expected transformer_finetune, got {}", config.kind.as_str())));
    }
    config.validate()?;
    let dir = resolve_checkpoint(&config.transformer.checkpoint_name)?;
    let pretrained = hf::load_pretrained(&dir)?;
    let mut net = pretrained.network;
    net.head_dropout = config.transformer.head_dropout;
    net.reset_head(config.seed);
    Ok(Classifier {
        config: config.clone(),
        encoder: InputEncoder::WordPiece(pretrained.tokenizer),
        backbone: Backbone::Transformer(net),
    })
}

/// An existing directory is used as is; otherwise the name is looked up in
/// the checkpoint cache directory.
pub fn resolve_checkpoint(name: &str) -> Result<PathBuf, ModelError> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Some(cache) = std::env::var_os(CHECKPOINT_CACHE_ENV) {
        let cached = PathBuf::from(cache).join(name);
        if cached.is_dir() {
            return Ok(cached);
        }
    }
    Err(ModelError::Checkpoint(format!(
        "checkpoint `{name}` not found locally (set {CHECKPOINT_CACHE_ENV} or pass a directory)"
    )))
}

#[cfg(test)]
mod tests {
    use super::gradcheck::gradient_check;
    use super::*;
    use crate::preprocess::{tokenize_sequence, Vocab};
    use rand::SeedableRng;

    pub(crate) fn tiny_recurrent() -> RecurrentConfig {
        RecurrentConfig {
            embed_dim: 6,
            conv_filters: 5,
            conv_kernel: 3,
            recurrent_units: 4,
            attention_dim: 5,
            dropout: 0.0,
            max_len: 16,
        }
    }

    fn vocab() -> Vocab {
        let seq = tokenize_sequence("contract A { function f ( ) public { x = x + 1 ; } }", "a");
        Vocab::build([&seq], 100, 1)
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let p = [0.1f64, 0.2, 0.3, 0.4];
        let (loss, d) = cross_entropy_grad(&p, 2, 2.0);
        assert!((loss + 2.0 * 0.3f64.ln()).abs() < 1e-12);
        assert_eq!(d.to_vec(), vec![0.2, 0.4, 0.6 - 2.0, 0.8]);
    }

    #[test]
    fn config_rejects_zero_dims_and_bad_classes() {
        let mut cfg = ModelConfig::recurrent(tiny_recurrent(), 1);
        assert!(cfg.validate().is_ok());
        cfg.recurrent.conv_filters = 0;
        assert!(matches!(cfg.validate(), Err(ModelError::Config(m)) if m.contains("conv_filters")));
        let mut cfg = ModelConfig::recurrent(tiny_recurrent(), 1);
        cfg.num_classes = 5;
        assert!(cfg.validate().is_err());
        assert!(build_recurrent_classifier(&ModelConfig::transformer(TransformerConfig::default(), 0), vocab()).is_err());
    }

    #[test]
    fn config_json_roundtrip_with_defaults() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"kind":"recurrent_baseline","seed":3}"#).unwrap();
        assert_eq!(cfg.recurrent, RecurrentConfig::default());
        assert_eq!(cfg.num_classes, 4);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn batch_probabilities_are_row_stochastic() {
        let clf = build_recurrent_classifier(&ModelConfig::recurrent(tiny_recurrent(), 7), vocab()).unwrap();
        let batch: Vec<_> = ["contract A { }", "x = x + 1 ;", "", "function f ( ) public { }"]
            .iter()
            .map(|s| clf.encode_source(s))
            .collect();
        let p = clf.predict_proba(&batch).unwrap();
        assert_eq!(p.dim(), (4, 4));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn wrong_length_is_a_shape_error() {
        let clf = build_recurrent_classifier(&ModelConfig::recurrent(tiny_recurrent(), 7), vocab()).unwrap();
        let bad = EncodedSequence { ids: vec![2, 3, 0], true_length: 2 };
        assert!(matches!(clf.predict_proba(&[bad]), Err(ModelError::Shape { expected: 16, found: 3, .. })));
    }

    #[test]
    fn repeated_input_gives_identical_rows() {
        let clf = build_recurrent_classifier(&ModelConfig::recurrent(tiny_recurrent(), 7), vocab()).unwrap();
        let e = clf.encode_source("function f ( ) public { x = x + 1 ; }");
        let p = clf.predict_proba(&[e.clone(), e.clone(), e]).unwrap();
        assert_eq!(p.row(0), p.row(1));
        assert_eq!(p.row(1), p.row(2));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let cfg = ModelConfig::recurrent(tiny_recurrent(), 11);
        let a = build_recurrent_classifier(&cfg, vocab()).unwrap();
        let b = build_recurrent_classifier(&cfg, vocab()).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        assert_eq!(a, b);
        let other = build_recurrent_classifier(&ModelConfig::recurrent(tiny_recurrent(), 12), vocab()).unwrap();
        assert_ne!(a.backbone, other.backbone);
    }

    #[test]
    fn attention_is_a_distribution_over_real_tokens() {
        let net = RecurrentNet::<f64>::init(&tiny_recurrent(), 20, 3);
        for len in [1usize, 4, 13] {
            let tokens: Vec<u32> = (0..len as u32).map(|i| 2 + i % 18).collect();
            let w = net.attention_weights(&tokens);
            assert_eq!(w.len(), len);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_gradients_match_finite_differences() {
        let net = RecurrentNet::<f64>::init(&tiny_recurrent(), 30, 5);
        let tokens: Vec<u32> = (0..12u32).map(|i| (i * 7 + 3) % 30).collect();
        for s in gradient_check(&net, &tokens, 2, 60, 1) {
            assert!(s.relative_error() < 1e-3 || (s.analytic - s.numeric).abs() < 1e-9, "{s:?}");
        }
    }

    #[test]
    fn transformer_gradients_match_finite_differences() {
        for family in [EncoderFamily::Bert, EncoderFamily::DistilBert] {
            let arch = EncoderArch {
                family,
                vocab_size: 25,
                hidden: 8,
                layers: 2,
                heads: 2,
                intermediate: 12,
                max_positions: 16,
                type_vocab_size: 2,
                layer_norm_eps: 1e-12,
                hidden_dropout: 0.0,
            };
            let net = TransformerNet::<f64>::random(arch, 0.0, 9);
            let tokens = [2u32, 7, 11, 3, 19, 4];
            for s in gradient_check(&net, &tokens, 1, 60, 2) {
                assert!(s.relative_error() < 1e-3 || (s.analytic - s.numeric).abs() < 1e-9, "{family:?} {s:?}");
            }
        }
    }

    #[test]
    fn dropout_only_applies_with_rng() {
        let mut cfg = tiny_recurrent();
        cfg.dropout = 0.5;
        let net = RecurrentNet::<f32>::init(&cfg, 20, 1);
        let tokens = [2u32, 3, 4, 5];
        let mut g = net.zeros_like();
        let (_, p_eval) = net.loss_and_grad(&tokens, 0, 1.0, None, &mut g);
        assert_eq!(p_eval, net.probabilities(&tokens));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (_, p_train) = net.loss_and_grad(&tokens, 0, 1.0, Some(&mut rng), &mut g);
        assert_ne!(p_train, p_eval);
    }
}
