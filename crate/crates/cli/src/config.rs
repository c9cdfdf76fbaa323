use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scvd_core::corpus::SplitRatios;
use scvd_core::model::{ModelConfig, ModelKind, RecurrentConfig};
use scvd_core::preprocess::{DEFAULT_MAX_SIZE, DEFAULT_MIN_FREQ};
use scvd_core::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self { train: r.train, val: r.val, test: r.test, seed: 42 }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train, val: self.val, test: self.test }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub max_vocab_size: usize,
    pub min_freq: u64,
    /// Overrides the model's input length when set.
    pub max_len: Option<usize>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { max_vocab_size: DEFAULT_MAX_SIZE, min_freq: DEFAULT_MIN_FREQ, max_len: None }
    }
}

/// Everything a `train` run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_model() -> ModelConfig {
    ModelConfig::recurrent(RecurrentConfig::default(), 0)
}

impl RunConfigFile {
    pub fn new(dataset: PathBuf) -> Self {
        Self {
            dataset,
            output_dir: default_output_dir(),
            split: SplitSection::default(),
            preprocess: PreprocessSection::default(),
            model: default_model(),
            train: TrainConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Relative dataset and output paths are taken relative to the config
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// One seed for split, initialisation and training order.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// Apply cross-section settings (input length).
    pub fn resolved_model(&self) -> ModelConfig {
        let mut model = self.model.clone();
        if let Some(len) = self.preprocess.max_len {
            match model.kind {
                ModelKind::RecurrentBaseline => model.recurrent.max_len = len,
                ModelKind::TransformerFinetune => model.transformer.max_positions = len,
            }
        }
        model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfigFile::from_toml("dataset = \"d.csv\"").unwrap();
        assert_eq!(cfg.split, SplitSection::default());
        assert_eq!(cfg.model.kind, ModelKind::RecurrentBaseline);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.train.batch_size, 16);
    }

    #[test]
    fn toml_roundtrip() {
        let text = r#"
            dataset = "data/contracts.csv"
            output_dir = "runs/distil"
            [split]
            seed = 7
            [preprocess]
            max_len = 256
            [model]
            kind = "transformer_finetune"
            seed = 7
            [model.transformer]
            checkpoint_name = "distilbert-base-uncased"
            [train]
            epochs = 3
            learning_rate = 3e-5
            [train.optimizer]
            name = "adam"
        "#;
        let cfg = RunConfigFile::from_toml(text).unwrap();
        assert_eq!(cfg.resolved_model().transformer.max_positions, 256);
        assert_eq!(cfg.train.learning_rate, Some(3e-5));
        assert_eq!(RunConfigFile::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfigFile::from_toml("dataset = \"d\"\n[train]\nepoch = 3").is_err());
    }
}
