//! `scvd` command implementations.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, CliError, Output};
pub use config::RunConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Human,
    /// Versioned JSON on stdout.
    Structured,
}

#[derive(Debug, Parser)]
#[command(name = "scvd", version, about = "Classify Solidity contracts into four vulnerability classes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for splitting, initialisation and shuffling (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset CSV and report class counts.
    Ingest {
        /// Dataset CSV; defaults to the config's `dataset`.
        dataset: Option<PathBuf>,
    },
    /// Stratified train/val/test split; writes a split manifest.
    Split {
        dataset: Option<PathBuf>,
    },
    /// Split, preprocess, build, train and evaluate as configured.
    Train,
    /// Evaluate a checkpoint on one partition of a split.
    Evaluate {
        /// Model checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split manifest produced by `split` or `train`.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        partition: String,
    },
    /// Predict labels for Solidity files or directories of `.sol` files.
    Scan {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Flag predictions whose top probability is below this value.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Side-by-side metrics of run directories that share a test split.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Write a synthetic dataset CSV with the given class counts.
    Synth {
        /// Output CSV path.
        path: PathBuf,
        /// Counts in DD,IO,RE,TD order.
        #[arg(long, value_delimiter = ',', default_values_t = [97usize, 590, 1218, 312])]
        counts: Vec<usize>,
    },
}
