//! Mini-batch training with per-epoch curves, best/last checkpoints and
//! exact resume.
//!
//! All randomness (epoch shuffles, dropout masks) is derived from
//! `(seed, epoch, example index)`, and batch gradients are summed over a
//! fixed sharding, so a run does not depend on the number of threads and a
//! resumed run replays the uninterrupted one.

mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::NUM_CLASSES;
use crate::model::checkpoint::{load_classifier, read_verified, save_classifier};
use crate::model::hf::{read_tensors, write_tensors};
use crate::model::{
    effective_tokens, Backbone, Classifier, EncodedDataset, ModelError, ModelKind, Network,
};
use crate::nn::{accumulate, Parameters};

pub use optim::{Adam, OptimizerConfig};

pub const BEST_CHECKPOINT_DIR: &str = "checkpoints/best";
pub const LAST_CHECKPOINT_DIR: &str = "checkpoints/last";
pub const METRICS_FILE: &str = "metrics.csv";
const OPTIMIZER_FILE: &str = "optimizer.safetensors";
const STATE_FILE: &str = "trainer_state.json";
const STATE_SCHEMA_VERSION: u32 = 1;

/// Examples per gradient shard. Shards run in parallel and are summed in
/// order, so the result is independent of the thread pool.
const SHARD_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CategoricalCrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the default for the model kind.
    pub learning_rate: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    pub seed: u64,
    /// Stop after this many epochs without a validation-accuracy gain.
    pub early_stop: Option<usize>,
    /// Inverse-frequency class weights in the loss.
    pub class_weights: bool,
    /// Leave the best-validation weights in the model when training ends.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: None,
            optimizer: OptimizerConfig::default(),
            loss: LossKind::CategoricalCrossEntropy,
            seed: 0,
            early_stop: None,
            class_weights: false,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn default_learning_rate(kind: ModelKind) -> f64 {
        match kind {
            ModelKind::RecurrentBaseline => 1e-3,
            ModelKind::TransformerFinetune => 2e-5,
        }
    }

    pub fn learning_rate_for(&self, kind: ModelKind) -> f64 {
        self.learning_rate.unwrap_or_else(|| Self::default_learning_rate(kind))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::Config(format!("learning_rate must be positive, got {lr}")));
            }
        }
        let OptimizerConfig::Adam { beta1, beta2, eps } = self.optimizer;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(TrainError::Config("adam needs betas in [0, 1) and eps > 0".into()));
        }
        if self.early_stop == Some(0) {
            return Err(TrainError::Config("early_stop patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, continuing across resumes.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub stopped_early: bool,
}

impl TrainingRun {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.records.iter().find(|r| r.epoch == e))
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc`, one row per epoch.
    pub fn curves_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]).expect("in-memory");
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.val_loss.to_string(),
                r.val_acc.to_string(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize, run: Box<TrainingRun> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    fn checkpoint(msg: impl Into<String>) -> Self {
        Self::Model(ModelError::Checkpoint(msg.into()))
    }
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    schema_version: u32,
    adam_step: u64,
    best_val_acc: f64,
    since_best: usize,
    train_hash: String,
    val_hash: String,
    run: TrainingRun,
}

/// Inverse-frequency weights `n / (k · n_c)` over classes present in
/// `labels`; absent classes get weight 0.
pub fn balanced_class_weights(data: &EncodedDataset) -> [f32; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for l in &data.labels {
        counts[l.index()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    counts.map(|c| if c == 0 { 0.0 } else { data.len() as f32 / (present * c) as f32 })
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(epoch as u64)))
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(epoch as u64)) ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

struct EpochTotals {
    loss: f64,
    correct: usize,
    diverged: bool,
}

fn run_epoch<N: Network<f32>>(
    net: &mut N,
    adam: &mut Adam,
    data: &EncodedDataset,
    pad: u32,
    cfg: &TrainConfig,
    weights: &[f32; NUM_CLASSES],
    epoch: usize,
) -> EpochTotals {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch));
    let mut totals = EpochTotals { loss: 0.0, correct: 0, diverged: false };
    for batch in order.chunks(cfg.batch_size) {
        let model = &*net;
        let shards: Vec<(N, f64, usize)> = batch
            .par_chunks(SHARD_SIZE)
            .map(|chunk| {
                let mut grad = model.zeros_like();
                let mut loss = 0.0;
                let mut correct = 0;
                for &i in chunk {
                    let target = data.labels[i].index();
                    let mut rng = example_rng(cfg.seed, epoch, i);
                    let tokens = effective_tokens(&data.inputs[i], &pad);
                    let (l, p) = model.loss_and_grad(tokens, target, weights[target], Some(&mut rng), &mut grad);
                    loss += l as f64;
                    if crate::model::argmax_label(&p).index() == target {
                        correct += 1;
                    }
                }
                (grad, loss, correct)
            })
            .collect();
        let mut shards = shards.into_iter();
        let (mut grad, mut loss, mut correct) = shards.next().expect("non-empty batch");
        for (g, l, c) in shards {
            accumulate(&mut grad, &g);
            loss += l;
            correct += c;
        }
        if !loss.is_finite() {
            totals.diverged = true;
            return totals;
        }
        optim::scale(&mut grad, 1.0 / batch.len() as f32);
        adam.update(net, &grad);
        totals.loss += loss;
        totals.correct += correct;
    }
    totals
}

fn save_optimizer(adam: &Adam, names: &[(String, Vec<usize>)]) -> Result<Vec<u8>, TrainError> {
    let mut tensors = Vec::with_capacity(2 * names.len());
    for ((name, shape), (m, v)) in names.iter().zip(adam.m.iter().zip(&adam.v)) {
        tensors.push((format!("m.{name}"), shape.clone(), m.clone()));
        tensors.push((format!("v.{name}"), shape.clone(), v.clone()));
    }
    Ok(write_tensors(&tensors)?)
}

fn load_optimizer(bytes: &[u8], names: &[(String, Vec<usize>)], adam: &mut Adam) -> Result<(), TrainError> {
    let mut tensors = read_tensors(bytes)?;
    for (i, (name, shape)) in names.iter().enumerate() {
        for (prefix, slot) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
            let t = tensors
                .remove(&format!("{prefix}.{name}"))
                .ok_or_else(|| TrainError::checkpoint(format!("optimizer state lacks {prefix}.{name}")))?;
            if &t.shape != shape {
                return Err(TrainError::checkpoint(format!("optimizer state for {name} has the wrong shape")));
            }
            *slot = t.data;
        }
    }
    Ok(())
}

fn backbone_names(b: &Backbone) -> Vec<(String, Vec<usize>)> {
    match b {
        Backbone::Recurrent(n) => n.names(),
        Backbone::Transformer(n) => n.names(),
    }
}

/// Drives training one epoch at a time.
pub struct Trainer<'a> {
    clf: &'a mut Classifier,
    train: &'a EncodedDataset,
    val: &'a EncodedDataset,
    cfg: TrainConfig,
    adam: Adam,
    weights: [f32; NUM_CLASSES],
    run: TrainingRun,
    best_val_acc: f64,
    best_backbone: Option<Backbone>,
    since_best: usize,
    run_dir: Option<PathBuf>,
    epochs_this_session: usize,
}

impl<'a> Trainer<'a> {
    /// Fresh run. Checkpoints and `metrics.csv` go under `run_dir` if given.
    pub fn new(
        clf: &'a mut Classifier,
        train: &'a EncodedDataset,
        val: &'a EncodedDataset,
        cfg: TrainConfig,
        run_dir: Option<&Path>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        for (i, seq) in train.inputs.iter().chain(&val.inputs).enumerate() {
            clf.check_input(i, seq)?;
        }
        if cfg.epochs > 0 {
            if train.is_empty() {
                return Err(TrainError::EmptyDataset("training"));
            }
            if val.is_empty() {
                return Err(TrainError::EmptyDataset("validation"));
            }
        }
        let lr = cfg.learning_rate_for(clf.kind());
        let adam = match &clf.backbone {
            Backbone::Recurrent(n) => Adam::new(cfg.optimizer, lr, n),
            Backbone::Transformer(n) => Adam::new(cfg.optimizer, lr, n),
        };
        let weights = if cfg.class_weights { balanced_class_weights(train) } else { [1.0; NUM_CLASSES] };
        if let Some(dir) = run_dir {
            std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.to_path_buf(), source: e })?;
        }
        Ok(Self {
            clf,
            train,
            val,
            cfg,
            adam,
            weights,
            run: TrainingRun::default(),
            best_val_acc: f64::NEG_INFINITY,
            best_backbone: None,
            since_best: 0,
            run_dir: run_dir.map(Path::to_path_buf),
            epochs_this_session: 0,
        })
    }

    pub fn history(&self) -> &TrainingRun {
        &self.run
    }

    pub fn classifier(&self) -> &Classifier {
        self.clf
    }

    /// Whether the configured epoch budget (or early stopping) is exhausted.
    pub fn finished(&self) -> bool {
        self.epochs_this_session >= self.cfg.epochs || self.run.stopped_early
    }

    /// Train one epoch, evaluate on the validation set and checkpoint.
    pub fn step(&mut self) -> Result<&EpochRecord, TrainError> {
        let epoch = self.run.records.len() + 1;
        let start = Instant::now();
        let pad = self.clf.encoder.pad_id();
        let totals = match &mut self.clf.backbone {
            Backbone::Recurrent(n) => run_epoch(n, &mut self.adam, self.train, pad, &self.cfg, &self.weights, epoch),
            Backbone::Transformer(n) => run_epoch(n, &mut self.adam, self.train, pad, &self.cfg, &self.weights, epoch),
        };
        if totals.diverged {
            return Err(TrainError::Divergence { epoch, run: Box::new(self.run.clone()) });
        }
        let scores = self.clf.score(self.val)?;
        let val_correct =
            scores.predictions().iter().zip(&self.val.labels).filter(|(p, t)| p == t).count();
        let n = self.train.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: totals.loss / n,
            train_acc: totals.correct as f64 / n,
            val_loss: scores.mean_loss,
            val_acc: val_correct as f64 / self.val.len() as f64,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        if !record.val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, run: Box::new(self.run.clone()) });
        }
        self.epochs_this_session += 1;
        let improved = record.val_acc > self.best_val_acc;
        self.run.records.push(record);
        if improved {
            self.best_val_acc = self.run.records[epoch - 1].val_acc;
            self.run.best_epoch = Some(epoch);
            self.since_best = 0;
            if self.cfg.restore_best {
                self.best_backbone = Some(self.clf.backbone.clone());
            }
            if let Some(dir) = &self.run_dir {
                let path = dir.join(BEST_CHECKPOINT_DIR);
                save_classifier(self.clf, &path, &[])?;
                self.run.best_checkpoint = Some(path);
            }
        } else {
            self.since_best += 1;
            if self.cfg.early_stop.is_some_and(|p| self.since_best >= p) {
                self.run.stopped_early = true;
            }
        }
        self.write_last()?;
        Ok(&self.run.records[epoch - 1])
    }

    fn write_last(&mut self) -> Result<(), TrainError> {
        let Some(dir) = self.run_dir.clone() else { return Ok(()) };
        let path = dir.join(LAST_CHECKPOINT_DIR);
        self.run.last_checkpoint = Some(path.clone());
        let state = TrainerState {
            schema_version: STATE_SCHEMA_VERSION,
            adam_step: self.adam.step,
            best_val_acc: self.best_val_acc,
            since_best: self.since_best,
            train_hash: self.train.hash(),
            val_hash: self.val.hash(),
            run: self.run.clone(),
        };
        let optimizer = save_optimizer(&self.adam, &backbone_names(&self.clf.backbone))?;
        let state_json = serde_json::to_vec_pretty(&state).expect("json");
        save_classifier(self.clf, &path, &[(OPTIMIZER_FILE, &optimizer), (STATE_FILE, &state_json)])?;
        let metrics = dir.join(METRICS_FILE);
        std::fs::write(&metrics, self.run.curves_csv()).map_err(|e| TrainError::Io { path: metrics, source: e })
    }

    /// Run the remaining epochs and return the history.
    pub fn run(mut self) -> Result<TrainingRun, TrainError> {
        while !self.finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Stop here; optionally leave the best weights in the model.
    pub fn finish(self) -> TrainingRun {
        if let Some(best) = self.best_backbone {
            self.clf.backbone = best;
        }
        self.run
    }
}

/// Train `clf` in place for `cfg.epochs` epochs.
pub fn train(
    clf: &mut Classifier,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainingRun, TrainError> {
    Trainer::new(clf, train, val, cfg.clone(), run_dir)?.run()
}

/// Continue the run stored in `run_dir` for another `cfg.epochs` epochs.
/// Returns the model and the full history (old plus new epochs).
pub fn resume(
    run_dir: &Path,
    kind: ModelKind,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainingRun), TrainError> {
    let last = run_dir.join(LAST_CHECKPOINT_DIR);
    let (mut clf, manifest) = load_classifier(&last)?;
    if clf.kind() != kind {
        return Err(TrainError::checkpoint(format!(
            "checkpoint holds a {} model, not {}",
            clf.kind().as_str(),
            kind.as_str()
        )));
    }
    let state: TrainerState = serde_json::from_slice(&read_verified(&last, &manifest, STATE_FILE)?)
        .map_err(|e| TrainError::checkpoint(format!("{STATE_FILE}: {e}")))?;
    if state.schema_version != STATE_SCHEMA_VERSION {
        return Err(TrainError::checkpoint(format!("unsupported trainer state version {}", state.schema_version)));
    }
    if state.train_hash != train.hash() || state.val_hash != val.hash() {
        return Err(TrainError::checkpoint("datasets differ from the ones the checkpoint was trained on"));
    }
    let optimizer = read_verified(&last, &manifest, OPTIMIZER_FILE)?;
    let best = match &state.run.best_checkpoint {
        Some(p) if cfg.restore_best => Some(load_classifier(p)?.0.backbone),
        _ => None,
    };
    let history = {
        let mut trainer = Trainer::new(&mut clf, train, val, cfg.clone(), Some(run_dir))?;
        load_optimizer(&optimizer, &backbone_names(&trainer.clf.backbone), &mut trainer.adam)?;
        trainer.adam.step = state.adam_step;
        trainer.best_val_acc = state.best_val_acc;
        trainer.since_best = state.since_best;
        trainer.best_backbone = best;
        trainer.run = state.run;
        trainer.run.stopped_early = false;
        trainer.run()?
    };
    Ok((clf, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic;
    use crate::corpus::ClassCounts;
    use crate::model::{build_recurrent_classifier, ModelConfig, RecurrentConfig};
    use crate::preprocess::{lex_contract, Vocab};

    fn setup(dropout: f64) -> (Classifier, EncodedDataset, EncodedDataset) {
        let corpus = synthetic::generate(ClassCounts([4, 4, 4, 4]), 3);
        let seqs: Vec<_> = corpus.contracts().iter().map(|c| lex_contract(&c.source, "").0).collect();
        let vocab = Vocab::build(&seqs, 500, 1);
        let cfg = RecurrentConfig {
            embed_dim: 8,
            conv_filters: 8,
            conv_kernel: 3,
            recurrent_units: 6,
            attention_dim: 6,
            dropout,
            max_len: 48,
        };
        let clf = build_recurrent_classifier(&ModelConfig::recurrent(cfg, 1), vocab).unwrap();
        let data = EncodedDataset::from_corpus(&clf, &corpus);
        let val = data.subset(&[0, 5, 10, 15]);
        (clf, data, val)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 5, learning_rate: Some(5e-3), seed: 9, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (mut clf, train_set, val) = setup(0.3);
        let before = clf.clone();
        let run = train(&mut clf, &train_set, &val, &cfg(0), None).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.best_epoch, None);
        assert_eq!(clf, before);
    }

    #[test]
    fn history_length_and_best_epoch_rule() {
        let (mut clf, train_set, val) = setup(0.3);
        let run = train(&mut clf, &train_set, &val, &cfg(6), None).unwrap();
        assert_eq!(run.records.len(), 6);
        assert_eq!(run.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        let best = run.best_record().unwrap();
        assert!(run.records.iter().all(|r| r.val_acc <= best.val_acc));
        let first_max = run.records.iter().find(|r| r.val_acc == best.val_acc).unwrap();
        assert_eq!(first_max.epoch, best.epoch);
        assert_eq!(run.curves_csv().lines().count(), 7);
    }

    #[test]
    fn deterministic_given_seed() {
        let (mut a, train_set, val) = setup(0.3);
        let mut b = a.clone();
        let ra = train(&mut a, &train_set, &val, &cfg(3), None).unwrap();
        let rb = train(&mut b, &train_set, &val, &cfg(3), None).unwrap();
        assert_eq!(a, b);
        let strip = |r: &TrainingRun| r.records.iter().map(|e| (e.train_loss, e.val_acc)).collect::<Vec<_>>();
        assert_eq!(strip(&ra), strip(&rb));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (clf, train_set, val) = setup(0.3);
        let run_with = |threads: usize| {
            let mut c = clf.clone();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| train(&mut c, &train_set, &val, &cfg(2), None).unwrap());
            c
        };
        assert_eq!(run_with(1), run_with(3));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (clf, train_set, val) = setup(0.3);
        let mut straight = clf.clone();
        let full = {
            let mut c = cfg(6);
            c.restore_best = false;
            train(&mut straight, &train_set, &val, &c, None).unwrap()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut first = clf.clone();
        let mut c = cfg(3);
        c.restore_best = false;
        train(&mut first, &train_set, &val, &c, Some(dir.path())).unwrap();
        let (resumed, history) =
            resume(dir.path(), ModelKind::RecurrentBaseline, &train_set, &val, &c).unwrap();
        assert_eq!(history.records.len(), 6);
        assert_eq!(history.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(resumed, straight);
        let last = |r: &TrainingRun| r.records.last().unwrap().val_acc;
        assert!((last(&history) - last(&full)).abs() < 1e-6);
        assert_eq!(history.best_epoch, full.best_epoch);
    }

    #[test]
    fn resume_rejects_other_kind_and_other_data() {
        let (mut clf, train_set, val) = setup(0.0);
        let dir = tempfile::tempdir().unwrap();
        train(&mut clf, &train_set, &val, &cfg(1), Some(dir.path())).unwrap();
        let err = resume(dir.path(), ModelKind::TransformerFinetune, &train_set, &val, &cfg(1)).unwrap_err();
        assert!(matches!(err, TrainError::Model(ModelError::Checkpoint(_))));
        let err = resume(dir.path(), ModelKind::RecurrentBaseline, &val, &val, &cfg(1)).unwrap_err();
        assert!(matches!(err, TrainError::Model(ModelError::Checkpoint(_))));
        assert!(dir.path().join(METRICS_FILE).is_file());
        assert!(dir.path().join(BEST_CHECKPOINT_DIR).join("manifest.json").is_file());
    }

    #[test]
    fn empty_data_and_bad_config_are_rejected() {
        let (mut clf, train_set, _) = setup(0.0);
        let empty = EncodedDataset::default();
        assert!(matches!(train(&mut clf, &empty, &train_set, &cfg(1), None), Err(TrainError::EmptyDataset(_))));
        assert!(matches!(train(&mut clf, &train_set, &empty, &cfg(1), None), Err(TrainError::EmptyDataset(_))));
        assert!(train(&mut clf, &empty, &empty, &cfg(0), None).is_ok());
        let mut bad = cfg(1);
        bad.batch_size = 0;
        assert!(matches!(train(&mut clf, &train_set, &train_set, &bad, None), Err(TrainError::Config(_))));
        bad = cfg(1);
        bad.learning_rate = Some(0.0);
        assert!(matches!(train(&mut clf, &train_set, &train_set, &bad, None), Err(TrainError::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_partial_history() {
        let (mut clf, train_set, val) = setup(0.0);
        let c = cfg(3);
        train(&mut clf, &train_set, &val, &cfg(1), None).unwrap();
        if let Backbone::Recurrent(n) = &mut clf.backbone {
            n.head.w[[0, 0]] = f32::INFINITY;
        }
        match train(&mut clf, &train_set, &val, &c, None) {
            Err(TrainError::Divergence { epoch, run }) => {
                assert_eq!(epoch, 1);
                assert!(run.records.is_empty());
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.records.len())),
        }
    }

    #[test]
    fn class_weights_follow_inverse_frequency() {
        let (clf, _, _) = setup(0.0);
        let corpus = synthetic::generate(ClassCounts([1, 3, 0, 4]), 1);
        let data = EncodedDataset::from_corpus(&clf, &corpus);
        let w = balanced_class_weights(&data);
        assert_eq!(w, [8.0 / 3.0, 8.0 / 9.0, 0.0, 8.0 / 12.0]);
    }

    #[test]
    fn early_stop_shortens_history() {
        let (mut clf, train_set, val) = setup(0.0);
        let mut c = cfg(40);
        c.early_stop = Some(2);
        c.learning_rate = Some(1e-9);
        let run = train(&mut clf, &train_set, &val, &c, None).unwrap();
        assert!(run.stopped_early);
        assert_eq!(run.records.len(), 3);
    }
}
