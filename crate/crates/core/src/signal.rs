//! The reward-guided training signal.
//!
//! A label-smoothed spike target around the ground-truth token is shifted
//! toward the sampled token by an advantage factor
//! `η = (R − b) · L_C · π(ŷ)`. The model is trained by `KL(target ‖ model)`.
//! When the sampled token equals the ground truth the target is the plain
//! label-smoothed distribution, so the objective degrades gracefully to
//! label-smoothed supervision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Tensor;
use crate::tokens::{TokenId, PAD};

/// Floor applied to model probabilities before taking logs.
pub const MODEL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenRange { token: TokenId, vocab: usize },
    #[error("vocabulary size {0} too small")]
    VocabTooSmall(usize),
    #[error("invalid signal config: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("model distribution has a non-positive or non-finite entry at {0}")]
    BadModel(usize),
    #[error("invalid distribution: {0}")]
    BadDist(String),
    #[error("normalization constant must be positive, got {0}")]
    NormConst(f64),
}

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Entries must be finite and non-negative. The sum is not checked: the
    /// literal smoothing denominator and unnormalized reward-scaled targets
    /// both produce mass that deviates from 1.
    pub fn new(probs: Vec<f64>) -> Result<Self, SignalError> {
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(SignalError::BadDist(format!("entry {i} = {}", probs[i])));
        }
        Ok(ProbDist(probs))
    }

    /// Softmax of logits (or exp of log-probabilities, renormalized).
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ProbDist(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.0[id as usize]
    }

    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// Mass placed on the ground-truth token.
    pub label_smoothing: f64,
    /// Smoothing applied to the sampled token's reward mass.
    pub c_smooth: f64,
    pub vocab_size: usize,
    /// Use `(1 − LS)/(V − 2)` for off-target mass instead of `(1 − LS)/(V − 1)`.
    pub literal_denominator: bool,
    pub eta_clamp: Option<(f64, f64)>,
    /// Renormalize reward-scaled targets to unit mass.
    pub renormalize: bool,
    /// `L_C` in the advantage; `None` means the ground-truth length of the sample.
    pub length_scale: Option<usize>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            label_smoothing: 0.3,
            c_smooth: 0.3,
            vocab_size: 200,
            literal_denominator: false,
            eta_clamp: None,
            renormalize: false,
            length_scale: None,
        }
    }
}

impl SignalConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        SignalConfig { vocab_size, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.label_smoothing > 0.0 && self.label_smoothing < 1.0) {
            return Err(SignalError::Config(format!("label_smoothing {} not in (0,1)", self.label_smoothing)));
        }
        if !(0.0..1.0).contains(&self.c_smooth) {
            return Err(SignalError::Config(format!("c_smooth {} not in [0,1)", self.c_smooth)));
        }
        if self.vocab_size < 3 {
            return Err(SignalError::VocabTooSmall(self.vocab_size));
        }
        if let Some((lo, hi)) = self.eta_clamp {
            if lo > hi {
                return Err(SignalError::Config(format!("eta_clamp ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }

    fn check_token(&self, token: TokenId) -> Result<(), SignalError> {
        if (token as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(SignalError::TokenRange { token, vocab: self.vocab_size })
        }
    }
}

/// Spike distribution with `LS` on `y` and the rest spread over other tokens.
pub fn label_smoothed(y: TokenId, cfg: &SignalConfig) -> Result<ProbDist, SignalError> {
    cfg.check_token(y)?;
    let v = cfg.vocab_size;
    let denom = if cfg.literal_denominator {
        if v <= 2 {
            return Err(SignalError::VocabTooSmall(v));
        }
        (v - 2) as f64
    } else {
        if v <= 1 {
            return Err(SignalError::VocabTooSmall(v));
        }
        (v - 1) as f64
    };
    let off = (1.0 - cfg.label_smoothing) / denom;
    let mut probs = vec![off; v];
    probs[y as usize] = cfg.label_smoothing;
    Ok(ProbDist(probs))
}

/// `η = (R − b) · L_C · p(ŷ)`, optionally clamped.
pub fn advantage(reward: f64, baseline: f64, length_scale: usize, p_sampled: f64, clamp: Option<(f64, f64)>) -> f64 {
    let eta = (reward - baseline) * length_scale as f64 * p_sampled;
    match clamp {
        Some((lo, hi)) => eta.clamp(lo, hi),
        None => eta,
    }
}

/// Reward-scaled target. Identical to `d_ls` when `y_hat == y`; otherwise the
/// ground-truth cell is scaled by `1 − η`, the sampled cell is set to
/// `η(1 − c_smooth)`, and both are floored at zero.
pub fn reward_scaled(
    d_ls: &ProbDist,
    y: TokenId,
    y_hat: TokenId,
    eta: f64,
    cfg: &SignalConfig,
) -> Result<ProbDist, SignalError> {
    cfg.check_token(y)?;
    cfg.check_token(y_hat)?;
    if d_ls.len() != cfg.vocab_size {
        return Err(SignalError::Length(format!("target has {} entries, vocab {}", d_ls.len(), cfg.vocab_size)));
    }
    if y == y_hat {
        return Ok(d_ls.clone());
    }
    let mut probs = d_ls.0.clone();
    probs[y as usize] = ((1.0 - eta) * d_ls.0[y as usize]).max(0.0);
    probs[y_hat as usize] = (eta * (1.0 - cfg.c_smooth)).max(0.0);
    if cfg.renormalize {
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok(ProbDist(probs))
}

/// `KL(target ‖ model)` with `0 · log 0 = 0` and model entries floored at
/// [`MODEL_FLOOR`].
pub fn kl_divergence(target: &ProbDist, model: &ProbDist) -> Result<f64, SignalError> {
    if target.len() != model.len() {
        return Err(SignalError::Length(format!("target {} vs model {}", target.len(), model.len())));
    }
    let mut kl = 0.0;
    for (i, (&t, &m)) in target.0.iter().zip(&model.0).enumerate() {
        let m = m.max(MODEL_FLOOR);
        if !m.is_finite() || m <= 0.0 {
            return Err(SignalError::BadModel(i));
        }
        if t > 0.0 {
            kl += t * (t.ln() - m.ln());
        }
    }
    Ok(kl)
}

/// Per-timestep target of the biased objective.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTarget {
    pub timestep: usize,
    pub eta: f64,
    pub target: ProbDist,
}

fn check_lengths(model: usize, gt: usize, sampled: usize, rewards: usize, baselines: usize) -> Result<(), SignalError> {
    if [gt, sampled, rewards, baselines].iter().all(|&n| n == model) {
        Ok(())
    } else {
        Err(SignalError::Length(format!(
            "model {model}, gt {gt}, sampled {sampled}, rewards {rewards}, baselines {baselines}"
        )))
    }
}

fn gt_length(gt: &[TokenId]) -> usize {
    gt.iter().filter(|&&t| t != PAD).count()
}

/// Reward-scaled targets for every non-pad timestep.
pub fn biased_targets(
    model_dists: &[ProbDist],
    gt: &[TokenId],
    sampled: &[TokenId],
    rewards: &[f64],
    baseline_vals: &[f64],
    cfg: &SignalConfig,
) -> Result<Vec<StepTarget>, SignalError> {
    cfg.validate()?;
    check_lengths(model_dists.len(), gt.len(), sampled.len(), rewards.len(), baseline_vals.len())?;
    let length_scale = cfg.length_scale.unwrap_or_else(|| gt_length(gt));
    let mut out = Vec::with_capacity(gt.len());
    for t in 0..gt.len() {
        if gt[t] == PAD {
            continue;
        }
        cfg.check_token(sampled[t])?;
        let d_ls = label_smoothed(gt[t], cfg)?;
        let p_sampled = model_dists[t].get(sampled[t]);
        let eta = advantage(rewards[t], baseline_vals[t], length_scale, p_sampled, cfg.eta_clamp);
        let target = reward_scaled(&d_ls, gt[t], sampled[t], eta, cfg)?;
        out.push(StepTarget { timestep: t, eta, target });
    }
    Ok(out)
}

fn mean_kl(model_dists: &[ProbDist], targets: impl Iterator<Item = (usize, f64, ProbDist)>) -> Result<f64, SignalError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, weight, target) in targets {
        let model = &model_dists[t];
        if model.len() != target.len() {
            return Err(SignalError::Length(format!("model row {t} has {} entries", model.len())));
        }
        total += weight * kl_divergence(&target, model)?;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean over non-pad timesteps of `KL(d_RS ‖ model)`.
pub fn biased_sequence_loss(
    model_dists: &[ProbDist],
    gt: &[TokenId],
    sampled: &[TokenId],
    rewards: &[f64],
    baseline_vals: &[f64],
    cfg: &SignalConfig,
) -> Result<f64, SignalError> {
    let targets = biased_targets(model_dists, gt, sampled, rewards, baseline_vals, cfg)?;
    mean_kl(model_dists, targets.into_iter().map(|s| (s.timestep, 1.0, s.target)))
}

/// Plain label-smoothed KL, averaged over non-pad timesteps.
pub fn standard_sequence_loss(model_dists: &[ProbDist], gt: &[TokenId], cfg: &SignalConfig) -> Result<f64, SignalError> {
    cfg.validate()?;
    if model_dists.len() != gt.len() {
        return Err(SignalError::Length(format!("model {} vs gt {}", model_dists.len(), gt.len())));
    }
    let targets: Result<Vec<_>, _> = gt
        .iter()
        .enumerate()
        .filter(|(_, &y)| y != PAD)
        .map(|(t, &y)| label_smoothed(y, cfg).map(|d| (t, 1.0, d)))
        .collect();
    mean_kl(model_dists, targets?.into_iter())
}

/// Per-timestep weights `(1 − clamp(η, 0, 1)) · norm_const` of the weighted variant,
/// paired with their timesteps.
pub fn weighted_step_weights(
    model_dists: &[ProbDist],
    gt: &[TokenId],
    sampled: &[TokenId],
    rewards: &[f64],
    baseline_vals: &[f64],
    cfg: &SignalConfig,
    norm_const: f64,
) -> Result<Vec<(usize, f64)>, SignalError> {
    if !(norm_const > 0.0) {
        return Err(SignalError::NormConst(norm_const));
    }
    cfg.validate()?;
    check_lengths(model_dists.len(), gt.len(), sampled.len(), rewards.len(), baseline_vals.len())?;
    let length_scale = cfg.length_scale.unwrap_or_else(|| gt_length(gt));
    let mut out = Vec::new();
    for t in 0..gt.len() {
        if gt[t] == PAD {
            continue;
        }
        cfg.check_token(sampled[t])?;
        let p = model_dists[t].get(sampled[t]);
        let eta = advantage(rewards[t], baseline_vals[t], length_scale, p, None).clamp(0.0, 1.0);
        out.push((t, (1.0 - eta) * norm_const));
    }
    Ok(out)
}

/// Mean over non-pad timesteps of `(1 − clamp(η, 0, 1)) · norm_const · KL(d_LS ‖ model)`.
pub fn weighted_sequence_loss(
    model_dists: &[ProbDist],
    gt: &[TokenId],
    sampled: &[TokenId],
    rewards: &[f64],
    baseline_vals: &[f64],
    cfg: &SignalConfig,
    norm_const: f64,
) -> Result<f64, SignalError> {
    let weights = weighted_step_weights(model_dists, gt, sampled, rewards, baseline_vals, cfg, norm_const)?;
    let items: Result<Vec<_>, _> = weights
        .into_iter()
        .map(|(t, w)| label_smoothed(gt[t], cfg).map(|d| (t, w, d)))
        .collect();
    mean_kl(model_dists, items?.into_iter())
}

/// Linear expected-reward estimate over per-timestep features, fitted by
/// gradient descent on mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    weights: Vec<f64>,
    bias: f64,
    learning_rate: f64,
}

impl Baseline {
    pub fn new(width: usize, learning_rate: f64) -> Self {
        Baseline { weights: vec![0.0; width], bias: 0.0, learning_rate }
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_parameters(&mut self, weights: Vec<f64>, bias: f64) -> Result<(), SignalError> {
        if weights.len() != self.weights.len() {
            return Err(SignalError::Length(format!("baseline width {} vs {}", weights.len(), self.weights.len())));
        }
        self.weights = weights;
        self.bias = bias;
        Ok(())
    }

    pub fn predict(&self, feature: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(feature).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Predictions for every row of a `[T × width]` feature matrix.
    pub fn predict_rows(&self, features: &Tensor) -> Vec<f64> {
        (0..features.rows()).map(|r| self.predict(features.row(r))).collect()
    }

    pub fn mse(&self, features: &Tensor, rewards: &[f64]) -> f64 {
        let preds = self.predict_rows(features);
        preds.iter().zip(rewards).map(|(p, r)| (p - r).powi(2)).sum::<f64>() / rewards.len().max(1) as f64
    }

    /// One gradient step on the mean squared error; returns the pre-step MSE.
    pub fn update(&mut self, features: &Tensor, rewards: &[f64]) -> Result<f64, SignalError> {
        if features.rows() != rewards.len() || features.cols() != self.weights.len() {
            return Err(SignalError::Length(format!(
                "features {:?} vs {} rewards, width {}",
                features.shape(),
                rewards.len(),
                self.weights.len()
            )));
        }
        if rewards.is_empty() {
            return Ok(0.0);
        }
        let n = rewards.len() as f64;
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = 0.0;
        let mut mse = 0.0;
        for (r, &target) in rewards.iter().enumerate() {
            let x = features.row(r);
            let err = self.predict(x) - target;
            mse += err * err / n;
            grad_b += 2.0 * err / n;
            for (g, xi) in grad_w.iter_mut().zip(x) {
                *g += 2.0 * err * xi / n;
            }
        }
        for (w, g) in self.weights.iter_mut().zip(&grad_w) {
            *w -= self.learning_rate * g;
        }
        self.bias -= self.learning_rate * grad_b;
        Ok(mse)
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn reward_scaled_touches_only_two_cells(v in 3usize..30, y in 0u32..30, yh in 0u32..30, eta in -2.0f64..2.0) {
            let c = SignalConfig::with_vocab(v);
            let y = y % v as u32;
            let yh = yh % v as u32;
            let d = label_smoothed(y, &c).unwrap();
            let rs = reward_scaled(&d, y, yh, eta, &c).unwrap();
            for w in 0..v as u32 {
                if w != y && w != yh {
                    prop_assert_eq!(rs.get(w), d.get(w));
                }
            }
            prop_assert!(rs.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn mass_accounting(v in 3usize..30, y in 0u32..30, yh in 0u32..30, eta in 0.0f64..1.0, literal in any::<bool>()) {
            let c = SignalConfig { literal_denominator: literal, ..SignalConfig::with_vocab(v) };
            let y = y % v as u32;
            let yh = (yh % v as u32 + if yh % v as u32 == y { 1 } else { 0 }) % v as u32;
            prop_assume!(yh != y);
            let d = label_smoothed(y, &c).unwrap();
            let rs = reward_scaled(&d, y, yh, eta, &c).unwrap();
            let lhs = rs.sum() - d.sum();
            let rhs = eta * (1.0 - c.c_smooth) - eta * d.get(y) - d.get(yh);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn kl_nonnegative(a in prop::collection::vec(0.0f64..1.0, 2..10), seed in 0.01f64..1.0) {
            let total: f64 = a.iter().sum::<f64>() + 1e-9;
            let t = ProbDist::new(a.iter().map(|x| (x + 1e-9) / total).collect()).unwrap();
            let m = ProbDist::from_logits(&a.iter().map(|x| x * seed * 5.0).collect::<Vec<_>>());
            let t = ProbDist::new(t.probs().iter().map(|p| p / t.sum()).collect()).unwrap();
            prop_assert!(kl_divergence(&t, &m).unwrap() >= -1e-12);
        }
    }
}
