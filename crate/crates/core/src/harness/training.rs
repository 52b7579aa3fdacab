use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, Dataset, EvalReport, ExperimentConfig, HarnessError};
use crate::diffcore::{load_tensors, save_tensors, Optimizer, Tensor};
use crate::model::{
    train_manager_step, train_worker_step, warmstart_step, BatchItem, Model, RlSettings, StepReport,
};
use crate::signal::{Baseline, SignalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmstart,
    Manager,
    Worker,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmstart => "warmstart",
            Phase::Manager => "manager",
            Phase::Worker => "worker",
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub train_token_accuracy: f64,
    pub mean_reward: f64,
    /// Teacher-forced accuracy on the held-out split.
    pub token_accuracy: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub vocab_usage: usize,
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub model: Model,
    pub rows: Vec<EpochRow>,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_report: EvalReport,
}

/// Epoch (1-based) → phase under the warm-start-then-alternate schedule.
pub fn schedule(cfg: &ExperimentConfig) -> Vec<Phase> {
    let mut out = vec![Phase::Warmstart; cfg.training.warmstart_epochs];
    if cfg.mode.has_hrl_phase() {
        out.extend((0..cfg.training.hrl_epochs).map(|k| if k % 2 == 0 { Phase::Manager } else { Phase::Worker }));
    }
    out
}

/// Everything that evolves during training.
pub struct TrainerState {
    pub model: Model,
    pub optimizer: Optimizer,
    pub worker_baseline: Baseline,
    pub manager_baseline: Baseline,
    pub epochs_done: usize,
}

impl TrainerState {
    pub fn new(cfg: &ExperimentConfig, data: &Dataset) -> Result<Self, HarnessError> {
        let model = build_model(cfg, data, cfg.seed)?;
        let d = model.config().d_latent;
        Ok(TrainerState {
            model,
            optimizer: Optimizer::new(cfg.optimizer.clone())?,
            worker_baseline: Baseline::new(d, cfg.training.baseline_learning_rate),
            manager_baseline: Baseline::new(d, cfg.training.baseline_learning_rate),
            epochs_done: 0,
        })
    }

    pub fn checkpoint_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.params().named_tensors("model.");
        out.extend(self.optimizer.state_tensors("optim"));
        for (name, b) in [("worker", &self.worker_baseline), ("manager", &self.manager_baseline)] {
            out.push((format!("baseline.{name}.w"), Tensor::vector(b.weights().to_vec())));
            out.push((format!("baseline.{name}.b"), Tensor::scalar(b.bias())));
        }
        out.push(("meta.epoch".into(), Tensor::scalar(self.epochs_done as f64)));
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        Ok(save_tensors(path, &self.checkpoint_tensors())?)
    }

    /// Restores a checkpoint written by [`TrainerState::save`] into a state
    /// built from the same configuration.
    pub fn restore(&mut self, path: &Path) -> Result<(), HarnessError> {
        let tensors = load_tensors(path)?;
        self.model.params_mut().load_named("model.", &tensors).map_err(HarnessError::Checkpoint)?;
        // Optimizer state only exists once a step has run.
        if tensors.iter().any(|(n, _)| n.starts_with("optim.")) {
            let params = self.model.params().tensors().to_vec();
            self.optimizer.load_state("optim", &params, &tensors)?;
        }
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| HarnessError::Checkpoint(format!("missing {name}")))
        };
        for (name, b) in [("worker", &mut self.worker_baseline), ("manager", &mut self.manager_baseline)] {
            let w = find(&format!("baseline.{name}.w"))?.data().to_vec();
            let bias = find(&format!("baseline.{name}.b"))?.item().unwrap_or(0.0);
            b.set_parameters(w, bias)?;
        }
        self.epochs_done = find("meta.epoch")?.item().unwrap_or(0.0) as usize;
        Ok(())
    }
}

/// A freshly initialized model sized for `data`.
pub fn build_model(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Model, HarnessError> {
    let mc = cfg.resolved_model(data.d_audio, data.d_video, data.vocab.len());
    Ok(Model::new(mc, data.delimiter_ids(), seed)?)
}

/// Loads model parameters from a training checkpoint.
pub fn load_model(cfg: &ExperimentConfig, data: &Dataset, checkpoint: &Path) -> Result<Model, HarnessError> {
    let mut model = build_model(cfg, data, cfg.seed)?;
    let tensors = load_tensors(checkpoint)?;
    model.params_mut().load_named("model.", &tensors).map_err(HarnessError::Checkpoint)?;
    Ok(model)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Runs one epoch of `phase` over `train` and returns the mean step report.
pub fn run_epoch(
    state: &mut TrainerState,
    cfg: &ExperimentConfig,
    data: &Dataset,
    train: &[usize],
    epoch: usize,
    phase: Phase,
) -> Result<StepReport, HarnessError> {
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order = train.to_vec();
    order.shuffle(&mut rng);
    let lr = match phase {
        Phase::Warmstart => cfg.optimizer.learning_rate,
        _ => cfg.training.hrl_learning_rate.unwrap_or(cfg.optimizer.learning_rate),
    };
    state.optimizer.set_learning_rate(lr);
    let signal = SignalConfig { vocab_size: data.vocab.len(), ..cfg.signal.clone() };
    let mut total = StepReport::default();
    let mut steps = 0usize;
    for chunk in order.chunks(cfg.training.batch_size) {
        let batch: Vec<BatchItem<'_>> = chunk.iter().map(|&i| data.samples[i].item()).collect();
        let r = match phase {
            Phase::Warmstart => warmstart_step(&mut state.model, &mut state.optimizer, &batch, &signal),
            Phase::Worker => {
                let settings = RlSettings {
                    vocab: &data.vocab,
                    signal: &signal,
                    meteor: &cfg.meteor,
                    gamma: cfg.gamma_worker,
                    objective: cfg.objective(),
                };
                train_worker_step(
                    &mut state.model,
                    &mut state.optimizer,
                    &mut state.worker_baseline,
                    &batch,
                    &settings,
                    &mut rng,
                )
            }
            Phase::Manager => {
                let settings = RlSettings {
                    vocab: &data.vocab,
                    signal: &signal,
                    meteor: &cfg.meteor,
                    gamma: cfg.gamma_manager,
                    objective: cfg.objective(),
                };
                train_manager_step(
                    &mut state.model,
                    &mut state.optimizer,
                    &mut state.manager_baseline,
                    &batch,
                    &settings,
                    &mut rng,
                )
            }
        }
        .map_err(|e| HarnessError::Training(format!("epoch {epoch} ({}) step {steps}: {e}", phase.name())))?;
        total.loss += r.loss;
        total.tokens += r.tokens;
        total.correct += r.correct;
        total.mean_reward += r.mean_reward;
        total.baseline_mse += r.baseline_mse;
        steps += 1;
    }
    let n = steps.max(1) as f64;
    total.loss /= n;
    total.mean_reward /= n;
    total.baseline_mse /= n;
    Ok(total)
}

pub fn write_log(path: &Path, rows: &[EpochRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<EpochRow>, _>>()?)
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
}

/// Trains per `cfg` on its dataset file.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingOutcome, HarnessError> {
    let data = Dataset::load(&cfg.dataset)?;
    run_training_on(cfg, &data, None, |_| {})
}

/// Trains on `data`, optionally continuing from a checkpoint, calling
/// `on_epoch` after each logged epoch.
pub fn run_training_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
    resume: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainingOutcome, HarnessError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out.join("checkpoints"))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let log_path = out.join("metrics.csv");

    let mut state = TrainerState::new(cfg, data)?;
    let mut rows = Vec::new();
    if let Some(ckpt) = resume {
        state.restore(ckpt)?;
        if log_path.exists() {
            rows = read_log(&log_path)?;
            rows.retain(|r| r.epoch <= state.epochs_done);
        }
    }
    let (train, val) = data.split(cfg.training.val_fraction, cfg.seed);
    let val_eval: Vec<usize> = match cfg.training.eval_limit {
        Some(n) => val.iter().copied().take(n).collect(),
        None => val.clone(),
    };
    let mut checkpoints = Vec::new();
    let plan = schedule(cfg);
    let mut final_report = EvalReport::default();
    for (i, &phase) in plan.iter().enumerate().skip(state.epochs_done) {
        let epoch = i + 1;
        let step = run_epoch(&mut state, cfg, data, &train, epoch, phase)?;
        let (report, _) = evaluate_model(&state.model, data, &val_eval, &cfg.meteor)?;
        final_report = report;
        state.epochs_done = epoch;
        let row = EpochRow {
            epoch,
            phase,
            train_loss: step.loss,
            train_token_accuracy: step.accuracy(),
            mean_reward: step.mean_reward,
            token_accuracy: report.token_accuracy,
            bleu3: report.bleu3,
            bleu4: report.bleu4,
            meteor: report.meteor,
            vocab_usage: report.vocab_usage,
        };
        on_epoch(&row);
        rows.push(row);
        write_log(&log_path, &rows)?;
        if cfg.training.write_checkpoints {
            let p = checkpoint_path(out, epoch);
            state.save(&p)?;
            checkpoints.push(p);
        }
    }
    Ok(TrainingOutcome { model: state.model, rows, log_path, checkpoints, final_report })
}

/// Split selector for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    All,
}

/// Greedy-decodes a split with a checkpointed model.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, split: Split) -> Result<EvalReport, HarnessError> {
    let data = Dataset::load(&cfg.dataset)?;
    let model = load_model(cfg, &data, checkpoint)?;
    let (train, val) = data.split(cfg.training.val_fraction, cfg.seed);
    let idx = match split {
        Split::Train => train,
        Split::Val => val,
        Split::All => (0..data.samples.len()).collect(),
    };
    Ok(evaluate_model(&model, &data, &idx, &cfg.meteor)?.0)
}
