//! Caption metrics, METEOR-based hierarchical rewards, reward-scaled KL
//! targets, a small autodiff engine and a bimodal Worker/Manager captioning
//! model, plus the harness that trains it on synthetic data.

pub mod diffcore;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rewards;
pub mod signal;
pub mod tokens;
