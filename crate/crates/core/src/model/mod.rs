//! The hierarchical bimodal captioning network and its training steps.
//!
//! Audio and video features pass through per-modality self-attention and
//! bimodal cross-attention. Two decoders (Worker and Manager) each attend
//! to both encoded streams and fuse them with a learned sigmoid gate. The
//! Manager's features become goal vectors, one per clause segment, which
//! the Worker attends to before projecting to the vocabulary.

mod config;
mod network;
mod params;
mod train;

pub use config::{Modality, ModelConfig};
pub use network::{
    DecodedVars, EncodedPair, EncodedVars, ForwardVars, FusedFeatures, GoalNoise, GoalSequence, Model, Prepared,
    WorkerOutput,
};
pub use params::{ParamGroup, ParamStore};
pub use train::{
    rl_loss, rl_targets, train_manager_step, train_worker_step, warmstart_loss, warmstart_step, BatchItem, Objective,
    RlSettings, Role, SampleTargets, StepReport,
};

use thiserror::Error;

use crate::diffcore::DiffError;
use crate::rewards::RewardError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[cfg(test)]
mod tests;
