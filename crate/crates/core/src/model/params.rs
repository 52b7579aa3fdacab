use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Graph, Tensor, Var};

/// Ownership of a parameter for the freeze-alternated training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    WorkerDecoder,
    ManagerDecoder,
    /// Manager-side projection from decoder features to goals.
    GoalHead,
    /// Goal attention and vocabulary projection.
    WorkerHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::WorkerDecoder,
        ParamGroup::ManagerDecoder,
        ParamGroup::GoalHead,
        ParamGroup::WorkerHead,
    ];

    pub fn is_manager_side(self) -> bool {
        matches!(self, ParamGroup::ManagerDecoder | ParamGroup::GoalHead)
    }
}

/// Flat list of named parameter tensors, each tagged with its group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        ParamStore { names: Vec::new(), groups: Vec::new(), tensors: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: String, group: ParamGroup, tensor: Tensor) -> usize {
        self.names.push(name);
        self.groups.push(group);
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn len_of_group(&self, group: ParamGroup) -> usize {
        self.groups.iter().zip(&self.tensors).filter(|(g, _)| **g == group).map(|(_, t)| t.len()).sum()
    }

    pub fn mask(&self, trainable: impl Fn(ParamGroup) -> bool) -> Vec<bool> {
        self.groups.iter().map(|&g| trainable(g)).collect()
    }

    /// Adds every parameter to `g`, as a gradient-tracking leaf when its group
    /// is trainable and as a constant otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(ParamGroup) -> bool) -> Result<Vec<Var>, DiffError> {
        self.tensors
            .iter()
            .zip(&self.groups)
            .map(|(t, &grp)| if trainable(grp) { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Copies gradients from a finished backward pass into the tensors' grad
    /// buffers; parameters without a gradient are zeroed.
    pub fn load_grads(&mut self, g: &Graph, vars: &[Var]) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            let src = g.grad(*v);
            if let Some(dst) = t.grad_mut() {
                match src {
                    Some(s) => dst.copy_from_slice(s),
                    None => dst.iter_mut().for_each(|x| *x = 0.0),
                }
            }
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (format!("{prefix}{n}"), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("shape")))
            .collect()
    }

    /// Overwrites values from `(prefix + name, tensor)` pairs. Every parameter
    /// must be present with a matching shape.
    pub fn load_named(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<(), String> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}{name}");
            let src = tensors
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, s)| s)
                .ok_or_else(|| format!("missing parameter {key}"))?;
            if src.shape() != t.shape() {
                return Err(format!("parameter {key}: shape {:?}, expected {:?}", src.shape(), t.shape()));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfIdx {
    pub hidden: LinearIdx,
    pub out: LinearIdx,
}

/// Builds parameters with uniform `±1/√fan_in` weights and zero biases.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        let t = Tensor::matrix(rows, cols, data).expect("shape");
        self.store.push(name, self.group, t)
    }

    pub fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) -> usize {
        let n = shape.iter().product();
        let t = Tensor::new(shape, vec![value; n]).expect("shape");
        self.store.push(name, self.group, t)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let bound = 1.0 / (fan_in as f64).sqrt();
        LinearIdx {
            w: self.uniform(format!("{name}.w"), fan_in, fan_out, bound),
            b: self.constant(format!("{name}.b"), vec![fan_out], 0.0),
        }
    }

    pub fn norm(&mut self, name: &str, width: usize) -> NormIdx {
        NormIdx {
            gain: self.constant(format!("{name}.gain"), vec![width], 1.0),
            bias: self.constant(format!("{name}.bias"), vec![width], 0.0),
        }
    }

    pub fn attention(&mut self, name: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    pub fn ff(&mut self, name: &str, d: usize, hidden: usize) -> FfIdx {
        FfIdx { hidden: self.linear(&format!("{name}.hidden"), d, hidden), out: self.linear(&format!("{name}.out"), hidden, d) }
    }
}
