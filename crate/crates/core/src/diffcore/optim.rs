use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum; 0 disables it.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the gradient to this global L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.05,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Per-parameter optimizer state, indexed like the parameter slice passed to
/// [`Optimizer::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

/// Scales the gradients of the `active` parameters so that their joint L2
/// norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [Tensor], active: &[bool], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .zip(active)
        .filter(|(_, a)| **a)
        .filter_map(|(p, _)| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (p, _) in params.iter_mut().zip(active).filter(|(_, a)| **a) {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, DiffError> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(DiffError::Optimizer(format!("learning rate {}", config.learning_rate)));
        }
        if !(0.0..1.0).contains(&config.momentum)
            || !(0.0..1.0).contains(&config.beta1)
            || !(0.0..1.0).contains(&config.beta2)
        {
            return Err(DiffError::Optimizer("momentum and betas must lie in [0, 1)".into()));
        }
        Ok(Optimizer { config, first: Vec::new(), second: Vec::new(), steps: Vec::new() })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    fn ensure(&mut self, params: &[Tensor]) {
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.steps = vec![0; params.len()];
        }
    }

    /// One update of every parameter flagged in `active` that carries a
    /// gradient. Inactive parameters and their state are left untouched.
    pub fn step(&mut self, params: &mut [Tensor], active: &[bool]) {
        self.ensure(params);
        if let Some(max) = self.config.clip_norm {
            clip_grad_norm(params, active, max);
        }
        let c = self.config.clone();
        for (i, p) in params.iter_mut().enumerate() {
            if !active.get(i).copied().unwrap_or(false) {
                continue;
            }
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let data = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for ((x, g), m) in data.iter_mut().zip(&g).zip(m.iter_mut()) {
                        *m = c.momentum * *m + g;
                        *x -= c.learning_rate * *m;
                    }
                }
                OptimizerKind::Adam => {
                    let b1 = 1.0 - c.beta1.powi(t);
                    let b2 = 1.0 - c.beta2.powi(t);
                    for (((x, g), m), v) in data.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        *x -= c.learning_rate * (*m / b1) / ((*v / b2).sqrt() + c.epsilon);
                    }
                }
            }
        }
    }

    /// State as named tensors, for checkpointing.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            out.push((format!("{prefix}.{i}.m"), Tensor::vector(m.clone())));
            out.push((format!("{prefix}.{i}.v"), Tensor::vector(v.clone())));
            out.push((format!("{prefix}.{i}.t"), Tensor::scalar(self.steps[i] as f64)));
        }
        out
    }

    /// Restores state written by [`Optimizer::state_tensors`] for `params`.
    pub fn load_state(&mut self, prefix: &str, params: &[Tensor], tensors: &[(String, Tensor)]) -> Result<(), DiffError> {
        self.first.clear();
        self.ensure(params);
        let find = |name: String| {
            tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing {name}")))
        };
        for (i, p) in params.iter().enumerate() {
            let m = find(format!("{prefix}.{i}.m"))?;
            let v = find(format!("{prefix}.{i}.v"))?;
            let t = find(format!("{prefix}.{i}.t"))?;
            if m.len() != p.len() || v.len() != p.len() {
                return Err(DiffError::Checkpoint(format!("optimizer state {i} has the wrong size")));
            }
            self.first[i] = m.data().to_vec();
            self.second[i] = v.data().to_vec();
            self.steps[i] = t.item().unwrap_or(0.0) as u64;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::vector(vec![v]).with_grad();
        t.grad_mut().unwrap()[0] = g;
        t
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let cfg = OptimizerConfig { learning_rate: 0.1, momentum: 0.5, clip_norm: None, ..Default::default() };
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut ps = vec![param(1.0, 1.0)];
        opt.step(&mut ps, &[true]);
        assert!((ps[0].data()[0] - 0.9).abs() < 1e-15);
        opt.step(&mut ps, &[true]);
        assert!((ps[0].data()[0] - (0.9 - 0.1 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn inactive_parameters_do_not_move() {
        let mut opt = Optimizer::new(OptimizerConfig { kind: OptimizerKind::Adam, ..Default::default() }).unwrap();
        let mut ps = vec![param(1.0, 1.0), param(2.0, 1.0)];
        opt.step(&mut ps, &[true, false]);
        assert!(ps[0].data()[0] < 1.0);
        assert_eq!(ps[1].data()[0], 2.0);
        let state = opt.state_tensors("opt");
        let mut other = Optimizer::new(opt.config().clone()).unwrap();
        other.load_state("opt", &ps, &state).unwrap();
        assert_eq!(other, opt);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = vec![param(0.0, 3.0), param(0.0, 4.0)];
        let n = clip_grad_norm(&mut ps, &[true, true], 1.0);
        assert_eq!(n, 5.0);
        assert!((ps[0].grad().unwrap()[0] - 0.6).abs() < 1e-15);
    }
}
