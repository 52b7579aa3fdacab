use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;

use super::network::{GoalNoise, Prepared};
use super::{Model, ModelError, ParamGroup};
use crate::diffcore::{Graph, Optimizer, Tensor, Var};
use crate::metrics::MeteorParams;
use crate::rewards::{delta_meteor_trace, manager_rewards, worker_rewards};
use crate::signal::{biased_targets, label_smoothed, weighted_step_weights, Baseline, ProbDist, SignalConfig};
use crate::tokens::{TokenId, TokenSequence, Vocab};

/// One training example, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub audio: &'a Tensor,
    pub video: &'a Tensor,
    pub caption: &'a TokenSequence,
}

/// Which policy an RL step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker,
    Manager,
}

impl Role {
    pub fn trains(self, group: ParamGroup) -> bool {
        match self {
            Role::Worker => matches!(group, ParamGroup::Encoder | ParamGroup::WorkerDecoder | ParamGroup::WorkerHead),
            Role::Manager => group.is_manager_side(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// KL towards the reward-scaled target.
    Biased,
    /// Label-smoothed KL weighted by `(1 − clamp(η, 0, 1)) · norm_const`.
    Weighted { norm_const: f64 },
}

/// Everything an RL step needs besides the model and data.
#[derive(Debug, Clone, Copy)]
pub struct RlSettings<'a> {
    pub vocab: &'a Vocab,
    pub signal: &'a SignalConfig,
    pub meteor: &'a MeteorParams,
    pub gamma: f64,
    pub objective: Objective,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub loss: f64,
    /// Target tokens seen and teacher-forced argmax hits among them.
    pub tokens: usize,
    pub correct: usize,
    /// Mean per-timestep reward (0 for warm-start steps).
    pub mean_reward: f64,
    /// Baseline mean squared error before its update.
    pub baseline_mse: f64,
}

impl StepReport {
    pub fn accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

/// Frozen per-sample quantities of an RL step: sampled tokens, rewards,
/// baselines and the resulting KL targets. Held constant while
/// differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub prepared: Prepared,
    pub noise: Option<Vec<f64>>,
    pub sampled: Vec<TokenId>,
    pub rewards: Vec<f64>,
    pub baselines: Vec<f64>,
    /// Flat `[L_C × vocab]` target mass.
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    /// Rows fed to the baseline (detached decoder features).
    pub baseline_features: Tensor,
}

fn row_dists(t: &Tensor) -> Result<Vec<ProbDist>, ModelError> {
    (0..t.rows()).map(|r| Ok(ProbDist::new(t.row(r).iter().map(|v| v.exp()).collect())?)).collect()
}

fn count_correct(log_probs: &Tensor, targets: &[TokenId]) -> usize {
    targets
        .iter()
        .enumerate()
        .filter(|(r, &y)| {
            let row = log_probs.row(*r);
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == y as usize
        })
        .count()
}

fn check_finite(loss: f64, what: &str) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite(format!("{what} loss is {loss}")))
    }
}

/// Adds the per-sample KL terms and returns their batch mean.
fn batch_loss(g: &mut Graph, terms: Vec<Var>) -> Result<Var, ModelError> {
    let mut it = terms.into_iter();
    let mut total = it.next().ok_or_else(|| ModelError::Shape("empty batch".into()))?;
    for t in it {
        total = g.add(total, t)?;
    }
    Ok(total)
}

fn apply(model: &mut Model, opt: &mut Optimizer, g: &Graph, p: &[Var], trainable: impl Fn(ParamGroup) -> bool) {
    let mask = model.params().mask(&trainable);
    let store = model.params_mut();
    store.load_grads(g, p);
    opt.step(store.tensors_mut(), &mask);
}

/// Builds the supervised label-smoothed loss graph for a batch.
pub fn warmstart_loss(
    model: &Model,
    g: &mut Graph,
    p: &[Var],
    batch: &[BatchItem<'_>],
    signal: &SignalConfig,
) -> Result<(Var, usize, usize), ModelError> {
    let vocab = model.config().vocab_size;
    let cfg = SignalConfig { vocab_size: vocab, ..signal.clone() };
    let mut terms = Vec::new();
    let (mut tokens, mut correct) = (0, 0);
    for item in batch {
        let prep = model.prepare(item.caption);
        let f = model.forward_vars(g, p, item.audio, item.video, &prep.inputs, &prep.bounds, GoalNoise::Off)?;
        let mut targets = Vec::with_capacity(prep.targets.len() * vocab);
        for &y in &prep.targets {
            targets.extend(label_smoothed(y, &cfg)?.into_inner());
        }
        let n = prep.targets.len();
        tokens += n;
        correct += count_correct(g.value(f.log_probs), &prep.targets);
        terms.push(g.soft_target_kl(f.log_probs, targets, vec![1.0; n], (n * batch.len()) as f64)?);
    }
    Ok((batch_loss(g, terms)?, tokens, correct))
}

/// Teacher-forced label-smoothed KL on every parameter.
pub fn warmstart_step(
    model: &mut Model,
    opt: &mut Optimizer,
    batch: &[BatchItem<'_>],
    signal: &SignalConfig,
) -> Result<StepReport, ModelError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, |_| true)?;
    let (loss, tokens, correct) = warmstart_loss(model, &mut g, &p, batch, signal)?;
    let value = g.value(loss).item().unwrap_or(f64::NAN);
    check_finite(value, "warm-start")?;
    g.backward(loss)?;
    apply(model, opt, &g, &p, |_| true);
    Ok(StepReport { loss: value, tokens, correct, mean_reward: 0.0, baseline_mse: 0.0 })
}

/// Samples tokens from the current policy and freezes rewards, baselines
/// and targets for each batch item. Manager steps draw exploration noise.
pub fn rl_targets(
    model: &Model,
    batch: &[BatchItem<'_>],
    settings: &RlSettings<'_>,
    baseline: &Baseline,
    role: Role,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleTargets>, ModelError> {
    let vocab = model.config().vocab_size;
    let cfg = SignalConfig { vocab_size: vocab, ..settings.signal.clone() };
    let mut out = Vec::with_capacity(batch.len());
    for item in batch {
        let prepared = model.prepare(item.caption);
        let mut g = Graph::new();
        let p = model.bind(&mut g, |_| false)?;
        let noise = match role {
            Role::Worker => GoalNoise::Off,
            Role::Manager => GoalNoise::Sample(rng),
        };
        let f = model.forward_vars(&mut g, &p, item.audio, item.video, &prepared.inputs, &prepared.bounds, noise)?;
        let dists = row_dists(g.value(f.log_probs))?;
        let mut sampled = Vec::with_capacity(dists.len());
        for d in &dists {
            let w = WeightedIndex::new(d.probs()).map_err(|e| ModelError::Shape(format!("sampling: {e}")))?;
            sampled.push(w.sample(rng) as TokenId);
        }
        let pred: Vec<&str> = sampled.iter().map(|&t| settings.vocab.surface(t)).collect();
        let reference: Vec<&str> = prepared.targets.iter().map(|&t| settings.vocab.surface(t)).collect();
        let trace = delta_meteor_trace(&pred, &reference, settings.meteor)?;
        let rewards = match role {
            Role::Worker => worker_rewards(&trace, settings.gamma)?,
            Role::Manager => manager_rewards(&trace, &prepared.bounds, settings.gamma)?,
        };
        let baseline_features = match role {
            Role::Worker => g.value(f.worker.fused).clone(),
            Role::Manager => g.value(f.manager.fused).clone(),
        };
        let baselines = baseline.predict_rows(&baseline_features);
        let n = prepared.targets.len();
        let (targets, weights) = match settings.objective {
            Objective::Biased => {
                let steps = biased_targets(&dists, &prepared.targets, &sampled, &rewards, &baselines, &cfg)?;
                let mut flat = vec![0.0; n * vocab];
                let mut weights = vec![0.0; n];
                for s in steps {
                    flat[s.timestep * vocab..(s.timestep + 1) * vocab].copy_from_slice(s.target.probs());
                    weights[s.timestep] = 1.0;
                }
                (flat, weights)
            }
            Objective::Weighted { norm_const } => {
                let steps =
                    weighted_step_weights(&dists, &prepared.targets, &sampled, &rewards, &baselines, &cfg, norm_const)?;
                let mut flat = vec![0.0; n * vocab];
                let mut weights = vec![0.0; n];
                for (t, w) in steps {
                    flat[t * vocab..(t + 1) * vocab].copy_from_slice(label_smoothed(prepared.targets[t], &cfg)?.probs());
                    weights[t] = w;
                }
                (flat, weights)
            }
        };
        out.push(SampleTargets {
            prepared,
            noise: f.noise,
            sampled,
            rewards,
            baselines,
            targets,
            weights,
            baseline_features,
        });
    }
    Ok(out)
}

/// Loss graph for frozen RL targets: the batch mean of each sample's mean
/// per-token KL. Returns the loss and the per-sample log-probability nodes.
pub fn rl_loss(
    model: &Model,
    g: &mut Graph,
    p: &[Var],
    batch: &[BatchItem<'_>],
    frozen: &[SampleTargets],
) -> Result<(Var, Vec<Var>), ModelError> {
    if batch.len() != frozen.len() {
        return Err(ModelError::Shape(format!("{} items, {} target sets", batch.len(), frozen.len())));
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for (item, st) in batch.iter().zip(frozen) {
        let noise = match &st.noise {
            Some(n) => GoalNoise::Fixed(n),
            None => GoalNoise::Off,
        };
        let prep = &st.prepared;
        let f = model.forward_vars(g, p, item.audio, item.video, &prep.inputs, &prep.bounds, noise)?;
        let n = prep.targets.len();
        terms.push(g.soft_target_kl(f.log_probs, st.targets.clone(), st.weights.clone(), (n * batch.len()) as f64)?);
        outputs.push(f.log_probs);
    }
    Ok((batch_loss(g, terms)?, outputs))
}

fn rl_step(
    model: &mut Model,
    opt: &mut Optimizer,
    baseline: &mut Baseline,
    batch: &[BatchItem<'_>],
    settings: &RlSettings<'_>,
    role: Role,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, ModelError> {
    let frozen = rl_targets(model, batch, settings, baseline, role, rng)?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, |grp| role.trains(grp))?;
    let (loss, outputs) = rl_loss(model, &mut g, &p, batch, &frozen)?;
    let value = g.value(loss).item().unwrap_or(f64::NAN);
    check_finite(value, "reinforcement")?;
    g.backward(loss)?;
    apply(model, opt, &g, &p, |grp| role.trains(grp));

    let mut report = StepReport { loss: value, ..StepReport::default() };
    let mut reward_sum = 0.0;
    let mut mse = 0.0;
    for (st, lp) in frozen.iter().zip(outputs) {
        report.tokens += st.prepared.targets.len();
        report.correct += count_correct(g.value(lp), &st.prepared.targets);
        reward_sum += st.rewards.iter().sum::<f64>();
        mse += baseline.update(&st.baseline_features, &st.rewards)?;
    }
    report.mean_reward = reward_sum / report.tokens.max(1) as f64;
    report.baseline_mse = mse / frozen.len().max(1) as f64;
    Ok(report)
}

/// Worker update with the Manager decoder and goal head frozen.
pub fn train_worker_step(
    model: &mut Model,
    opt: &mut Optimizer,
    baseline: &mut Baseline,
    batch: &[BatchItem<'_>],
    settings: &RlSettings<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, ModelError> {
    rl_step(model, opt, baseline, batch, settings, Role::Worker, rng)
}

/// Manager update (decoder and goal head only) under exploration noise.
pub fn train_manager_step(
    model: &mut Model,
    opt: &mut Optimizer,
    baseline: &mut Baseline,
    batch: &[BatchItem<'_>],
    settings: &RlSettings<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, ModelError> {
    rl_step(model, opt, baseline, batch, settings, Role::Manager, rng)
}
