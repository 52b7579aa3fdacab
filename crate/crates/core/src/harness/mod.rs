//! Experiment plumbing: synthetic data, training runs, evaluation and the
//! per-token divergence comparison.

mod compare;
mod config;
mod data;
mod eval;
mod training;

pub use compare::{compare_divergence, CompareConfig, Comparison, TokenPair, TokenRow};
pub use config::{ExperimentConfig, GrammarConfig, Mode, TrainingConfig};
pub use data::{gen_dataset, pseudo_words, Dataset, Lexicon, SyntheticSample, DATASET_MAGIC, DATASET_VERSION};
pub use eval::{evaluate_captions, evaluate_model, EvalReport};
pub use training::{
    build_model, checkpoint_path, evaluate, load_model, read_log, run_epoch, run_training, run_training_on, schedule,
    write_log, EpochRow, Phase, Split, TrainerState, TrainingOutcome,
};

use thiserror::Error;

use crate::diffcore::DiffError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::rewards::RewardError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
