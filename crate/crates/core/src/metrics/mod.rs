//! Caption metrics: single-reference METEOR (exact and Porter-stem stages,
//! no synonym stage) and sentence BLEU-n.
//!
//! These serve both as the reward oracle during training and as the
//! evaluation metrics reported by the harness.

mod align;
mod bleu;
mod meteor;
mod stem;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align, count_chunks, AlignedPair, Alignment, MatchKind};
pub use bleu::{bleu_n, modified_precision};
pub use meteor::{meteor_score, score_from_alignment, MeteorScore};
pub use stem::porter_stem;
pub use tokenize::{tokenize, Token};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("BLEU order must be in 1..=4, got {0}")]
    BleuOrder(usize),
    #[error("invalid METEOR parameters: alpha={alpha}, beta={beta}, gamma={gamma}")]
    InvalidParams { alpha: f64, beta: f64, gamma: f64 },
}

/// METEOR parameterization. Defaults follow NLTK's `meteor_score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub enable_stemming: bool,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams { alpha: 0.9, beta: 3.0, gamma: 0.5, enable_stemming: true }
    }
}
