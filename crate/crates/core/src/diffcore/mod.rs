//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every primitive appends a node holding its output
//! value, and [`Graph::backward`] propagates adjoints in reverse order.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{load_tensors, read_tensors, save_tensors, write_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport, LeafReport};
pub use graph::{positional_encoding, CustomOp, Graph, Var};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite output")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
