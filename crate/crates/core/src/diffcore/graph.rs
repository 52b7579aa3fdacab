use super::{DiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-defined primitive with its own forward and backward rules.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, DiffError>;
    /// Gradient with respect to every input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    ConcatCols(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    LogSoftmax(Var),
    Softmax(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    AddConst(Var),
    Mix { gate: Var, a: Var, b: Var },
    Sum(Var),
    Mean(Var),
    SoftTargetKl { logp: Var, targets: Vec<f64>, weights: Vec<f64>, denom: f64 },
    Custom { op: Box<dyn CustomOp>, inputs: Vec<Var> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Linear { .. } => "linear",
            Op::ConcatCols(..) => "concat",
            Op::GatherRows { .. } => "gather_rows",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Softmax(..) => "softmax",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::AddConst(..) => "add_const",
            Op::Mix { .. } => "mix",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftTargetKl { .. } => "soft_target_kl",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations. Nodes are appended in evaluation order, which
/// is a topological order; [`Graph::backward`] walks it in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const LN_EPS: f64 = 1e-5;

/// Sinusoidal positional encoding table `[rows × cols]`.
pub fn positional_encoding(rows: usize, cols: usize) -> Vec<f64> {
    let mut pe = vec![0.0; rows * cols];
    for pos in 0..rows {
        for i in 0..cols {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / cols as f64);
            pe[pos * cols + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

/// `a [m×k] · b [k×n]`, accumulated into `out`.
fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `aᵀ · b` for `a [m×k]`, `b [m×n]`, accumulated into `out [k×n]`.
fn mm_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a · bᵀ` for `a [m×n]`, `b [k×n]`, accumulated into `out [m×k]`.
fn mm_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds a leaf; it tracks gradients iff the tensor does.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var, DiffError> {
        let rg = tensor.requires_grad();
        let value = Tensor::raw(tensor.shape().to_vec(), tensor.into_data());
        self.push(value, Op::Leaf, rg)
    }

    /// Adds a gradient-tracking leaf.
    pub fn param(&mut self, tensor: Tensor) -> Result<Var, DiffError> {
        let value = Tensor::raw(tensor.shape().to_vec(), tensor.into_data());
        self.push(value, Op::Leaf, true)
    }

    /// Adds a constant leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var, DiffError> {
        let value = Tensor::raw(tensor.shape().to_vec(), tensor.into_data());
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// The leaf's value with its gradient attached (zeros if it received none).
    pub fn leaf_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let mut t = node.value.clone();
        if node.requires_grad {
            t = t.with_grad();
            if let (Some(src), Some(dst)) = (self.grad(v), t.grad_mut()) {
                dst.copy_from_slice(src);
            }
        }
        t
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        mm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::raw(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape_of(a), self.shape_of(b))));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, DiffError> {
        self.same_shape(op.name(), a, b)?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::raw(self.shape_of(a), out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_op(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_op(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_op(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let out = self.data(a).iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::raw(self.shape_of(a), out), Op::Scale(a, c), rg)
    }

    /// `x [m×n] + bias [n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims(x);
        if self.value(bias).len() != n {
            return Err(shape_err("add_row", format!("bias of {} for {n} columns", self.value(bias).len())));
        }
        let b = self.data(bias);
        let out = self.data(x).iter().enumerate().map(|(i, v)| v + b[i % n]).collect();
        let rg = self.rg(&[x, bias]);
        self.push(Tensor::raw(vec![m, n], out), Op::AddRow(x, bias), rg)
    }

    /// `x [m×k] · w [k×n] (+ b [n])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let (m, k) = self.dims(x);
        let (k2, n) = self.dims(w);
        if k != k2 {
            return Err(shape_err("linear", format!("input width {k}, weight [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.data(b);
            if bias.len() != n {
                return Err(shape_err("linear", format!("bias of {} for {n} outputs", bias.len())));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        mm_acc(self.data(x), self.data(w), &mut out, m, k, n);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        self.push(Tensor::raw(vec![m, n], out), Op::Linear { x, w, b }, rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "no inputs".into()));
        };
        let m = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(shape_err("concat", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::raw(vec![m, total], out), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows of `table` at `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        let (rows, cols) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(self.value(table).row(i));
        }
        let rg = self.rg(&[table]);
        self.push(Tensor::raw(vec![ids.len(), cols], out), Op::GatherRows { table, ids: ids.to_vec() }, rg)
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        self.gather_rows(table, ids)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims(x);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(vec![m, n], out), Op::LogSoftmax(x), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims(x);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(vec![m, n], out), Op::Softmax(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        let out = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(self.shape_of(x), out), Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(self.shape_of(x), out), Op::Relu(x), rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims(x);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(shape_err("layer_norm", format!("gain/bias must have {n} entries")));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        let (g, b) = (self.data(gain), self.data(bias));
        for r in 0..m {
            let row = self.value(x).row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for c in 0..n {
                let h = (row[c] - mean) * s;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(Tensor::raw(vec![m, n], out), Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// Multi-head scaled dot-product attention `softmax(QKᵀ/√d_k)V`, with the
    /// head split taken over columns. Projections are the caller's business.
    /// With `causal`, query row i only sees key rows ≤ i.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var, DiffError> {
        let (lq, d) = self.dims(q);
        let (lk, dk) = self.dims(k);
        let (lv, dv) = self.dims(v);
        if dk != d || lv != lk || heads == 0 || d % heads != 0 || dv % heads != 0 || lk == 0 {
            return Err(shape_err(
                "attention",
                format!("q [{lq}×{d}], k [{lk}×{dk}], v [{lv}×{dv}], {heads} heads"),
            ));
        }
        let hd = d / heads;
        let hv = dv / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * dv];
        for h in 0..heads {
            for i in 0..lq {
                let p = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let qi = &qd[i * d + h * hd..i * d + (h + 1) * hd];
                for j in 0..lk {
                    if causal && j > i {
                        p[j] = f64::NEG_INFINITY;
                        continue;
                    }
                    let kj = &kd[j * d + h * hd..j * d + (h + 1) * hd];
                    p[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(p);
                let orow = &mut out[i * dv + h * hv..i * dv + (h + 1) * hv];
                for j in 0..lk {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let vj = &vd[j * dv + h * hv..j * dv + (h + 1) * hv];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += p[j] * x;
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(Tensor::raw(vec![lq, dv], out), Op::Attention { q, k, v, heads, probs }, rg)
    }

    /// Adds the sinusoidal positional encoding of the input's shape.
    pub fn add_positional(&mut self, x: Var) -> Result<Var, DiffError> {
        let (m, n) = self.dims(x);
        let pe = positional_encoding(m, n);
        let out = self.data(x).iter().zip(&pe).map(|(a, b)| a + b).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(vec![m, n], out), Op::AddConst(x), rg)
    }

    /// Adds a constant tensor of the same shape (no gradient to the constant).
    pub fn add_constant(&mut self, x: Var, c: &[f64]) -> Result<Var, DiffError> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("add_const", format!("{} values for {:?}", c.len(), self.shape_of(x))));
        }
        let out = self.data(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(self.shape_of(x), out), Op::AddConst(x), rg)
    }

    /// `gate · a + (1 − gate) · b` for a one-element `gate`.
    pub fn mix(&mut self, gate: Var, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mix", a, b)?;
        let Some(g) = self.value(gate).item() else {
            return Err(shape_err("mix", "gate must hold one value".into()));
        };
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| g * x + (1.0 - g) * y).collect();
        let rg = self.rg(&[gate, a, b]);
        self.push(Tensor::raw(self.shape_of(a), out), Op::Mix { gate, a, b }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.data(x).iter().sum::<f64>() / n;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// `Σ_t w_t · KL(targets_t ‖ exp(logp_t)) / denom` for constant targets.
    /// Targets need not be normalized; `0 · log 0 = 0`.
    pub fn soft_target_kl(
        &mut self,
        logp: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        denom: f64,
    ) -> Result<Var, DiffError> {
        let (m, n) = self.dims(logp);
        if targets.len() != m * n || weights.len() != m || !(denom > 0.0) {
            return Err(shape_err(
                "soft_target_kl",
                format!("logp [{m}×{n}], {} targets, {} weights, denom {denom}", targets.len(), weights.len()),
            ));
        }
        let lp = self.data(logp);
        let mut total = 0.0;
        for r in 0..m {
            let mut row = 0.0;
            for c in 0..n {
                let t = targets[r * n + c];
                if t > 0.0 {
                    row += t * (t.ln() - lp[r * n + c]);
                }
            }
            total += weights[r] * row;
        }
        let rg = self.rg(&[logp]);
        self.push(Tensor::scalar(total / denom), Op::SoftTargetKl { logp, targets, weights, denom }, rg)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var, DiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&values)?;
        let out = Tensor::raw(out.shape().to_vec(), out.into_data());
        let rg = self.rg(inputs);
        self.push(out, Op::Custom { op, inputs: inputs.to_vec() }, rg)
    }

    /// Reverse-mode accumulation of `∂loss/∂node` for every node that tracks
    /// gradients. Each node is visited once, in reverse insertion order.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(DiffError::NotScalar(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(DiffError::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        macro_rules! with_grad {
            ($v:expr, |$g:ident| $body:expr) => {
                if nodes[$v.0].requires_grad {
                    let len = nodes[$v.0].value.len();
                    let $g: &mut Vec<f64> = grads[$v.0].get_or_insert_with(|| vec![0.0; len]);
                    $body
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                with_grad!(*a, |g| mm_a_bt_acc(gout, self.data(*b), g, m, n, k));
                with_grad!(*b, |g| mm_at_b_acc(self.data(*a), gout, g, m, k, n));
            }
            Op::Add(a, b) => {
                with_grad!(*a, |g| add_into(g, gout));
                with_grad!(*b, |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |g| add_into(g, gout));
                with_grad!(*b, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                with_grad!(*a, |g| {
                    for ((x, y), o) in g.iter_mut().zip(self.data(*b)).zip(gout) {
                        *x += y * o;
                    }
                });
                with_grad!(*b, |g| {
                    for ((x, y), o) in g.iter_mut().zip(self.data(*a)).zip(gout) {
                        *x += y * o;
                    }
                });
            }
            Op::Scale(a, c) => with_grad!(*a, |g| g.iter_mut().zip(gout).for_each(|(x, o)| *x += c * o)),
            Op::AddRow(x, bias) => {
                let n = self.dims(*x).1;
                with_grad!(*x, |g| add_into(g, gout));
                with_grad!(*bias, |g| {
                    for (idx, o) in gout.iter().enumerate() {
                        g[idx % n] += o;
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.dims(*x);
                let n = self.dims(*w).1;
                with_grad!(*x, |g| mm_a_bt_acc(gout, self.data(*w), g, m, n, k));
                with_grad!(*w, |g| mm_at_b_acc(self.data(*x), gout, g, m, k, n));
                if let Some(b) = b {
                    with_grad!(*b, |g| {
                        for row in gout.chunks(n) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    with_grad!(p, |g| {
                        for r in 0..m {
                            for c in 0..w {
                                g[r * w + c] += gout[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = self.dims(*table).1;
                with_grad!(*table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * cols..(id + 1) * cols], &gout[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let n = node.value.cols();
                with_grad!(*x, |g| {
                    for (r, (grow, orow)) in g.chunks_mut(n).zip(gout.chunks(n)).enumerate() {
                        let lp = node.value.row(r);
                        let s: f64 = orow.iter().sum();
                        for c in 0..n {
                            grow[c] += orow[c] - lp[c].exp() * s;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                with_grad!(*x, |g| {
                    for (r, (grow, orow)) in g.chunks_mut(n).zip(gout.chunks(n)).enumerate() {
                        let p = node.value.row(r);
                        let dot: f64 = p.iter().zip(orow).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            grow[c] += p[c] * (orow[c] - dot);
                        }
                    }
                });
            }
            Op::Sigmoid(x) => with_grad!(*x, |g| {
                for ((gi, s), o) in g.iter_mut().zip(node.value.data()).zip(gout) {
                    *gi += o * s * (1.0 - s);
                }
            }),
            Op::Relu(x) => with_grad!(*x, |g| {
                for ((gi, xi), o) in g.iter_mut().zip(self.data(*x)).zip(gout) {
                    if *xi > 0.0 {
                        *gi += o;
                    }
                }
            }),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = self.dims(*x);
                let gv = self.data(*gain);
                with_grad!(*gain, |g| {
                    for r in 0..m {
                        for c in 0..n {
                            g[c] += gout[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                with_grad!(*bias, |g| {
                    for row in gout.chunks(n) {
                        add_into(g, row);
                    }
                });
                with_grad!(*x, |g| {
                    for r in 0..m {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..n {
                            let d = gout[r * n + c] * gv[c];
                            mean_d += d;
                            mean_dx += d * xhat[r * n + c];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for c in 0..n {
                            let d = gout[r * n + c] * gv[c];
                            g[r * n + c] += rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.attention_backward(*q, *k, *v, *heads, probs, gout, grads);
            }
            Op::AddConst(x) => with_grad!(*x, |g| add_into(g, gout)),
            Op::Mix { gate, a, b } => {
                let gval = self.value(*gate).item().unwrap_or(0.0);
                with_grad!(*a, |g| g.iter_mut().zip(gout).for_each(|(x, o)| *x += gval * o));
                with_grad!(*b, |g| g.iter_mut().zip(gout).for_each(|(x, o)| *x += (1.0 - gval) * o));
                with_grad!(*gate, |g| {
                    g[0] += gout
                        .iter()
                        .zip(self.data(*a).iter().zip(self.data(*b)))
                        .map(|(o, (x, y))| o * (x - y))
                        .sum::<f64>();
                });
            }
            Op::Sum(x) => with_grad!(*x, |g| g.iter_mut().for_each(|gi| *gi += gout[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                with_grad!(*x, |g| g.iter_mut().for_each(|gi| *gi += gout[0] / n));
            }
            Op::SoftTargetKl { logp, targets, weights, denom } => {
                let n = self.dims(*logp).1;
                with_grad!(*logp, |g| {
                    for (idx, t) in targets.iter().enumerate() {
                        g[idx] -= gout[0] * weights[idx / n] * t / denom;
                    }
                });
            }
            Op::Custom { op, inputs } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let input_grads = op.backward(&values, &node.value, gout);
                for (inp, ig) in inputs.iter().zip(input_grads) {
                    with_grad!(*inp, |g| add_into(g, &ig));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (lq, d) = self.dims(q);
        let lk = self.dims(k).0;
        let dv = self.dims(v).1;
        let hd = d / heads;
        let hv = dv / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![0.0; lq * d];
        let mut dk = vec![0.0; lk * d];
        let mut dvv = vec![0.0; lk * dv];
        let mut dp = vec![0.0; lk];
        for h in 0..heads {
            for i in 0..lq {
                let p = &probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let go = &gout[i * dv + h * hv..i * dv + (h + 1) * hv];
                for j in 0..lk {
                    let vj = &vd[j * dv + h * hv..j * dv + (h + 1) * hv];
                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    if p[j] != 0.0 {
                        let dvj = &mut dvv[j * dv + h * hv..j * dv + (h + 1) * hv];
                        for (x, o) in dvj.iter_mut().zip(go) {
                            *x += p[j] * o;
                        }
                    }
                }
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                let qi = &qd[i * d + h * hd..i * d + (h + 1) * hd];
                for j in 0..lk {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj = &kd[j * d + h * hd..j * d + (h + 1) * hd];
                    let dqi = &mut dq[i * d + h * hd..i * d + (h + 1) * hd];
                    for (x, kv) in dqi.iter_mut().zip(kj) {
                        *x += ds * kv;
                    }
                    let dkj = &mut dk[j * d + h * hd..j * d + (h + 1) * hd];
                    for (x, qv) in dkj.iter_mut().zip(qi) {
                        *x += ds * qv;
                    }
                }
            }
        }
        for (var, g) in [(q, dq), (k, dk), (v, dvv)] {
            if self.nodes[var.0].requires_grad {
                let slot = grads[var.0].get_or_insert_with(|| vec![0.0; g.len()]);
                add_into(slot, &g);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{gradient_check, Tensor};
    use proptest::prelude::*;

    fn mat(r: usize, c: usize, seed: f64) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|i| ((i as f64 * 1.37 + seed) * 0.9).sin()).collect()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 4, vec![0.0, 50.0, 0.0, 0.0]).unwrap()).unwrap();
        let p = g.softmax(x).unwrap();
        assert!((g.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let lp = g.log_softmax(x).unwrap();
        let s: f64 = g.value(lp).data().iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_key_attention_returns_value() {
        let mut g = Graph::new();
        let q = g.constant(mat(3, 4, 0.2)).unwrap();
        let k = g.constant(mat(1, 4, 1.0)).unwrap();
        let v = g.constant(Tensor::matrix(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let out = g.attention(q, k, v, 2, false).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(out).row(r), &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn sigmoid_of_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), Some(0.5));
    }

    #[test]
    fn sum_and_product_gradients() {
        let mut g = Graph::new();
        let x = g.param(mat(2, 3, 0.0)).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.param(Tensor::scalar(-2.0)).unwrap();
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[-2.0]);
        assert_eq!(g.grad(y).unwrap(), &[3.0]);
        assert_eq!(g.leaf_tensor(x).grad(), Some(&[-2.0][..]));
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.param(mat(2, 3, 0.0)).unwrap();
        let b = g.param(mat(2, 3, 0.0)).unwrap();
        assert!(matches!(g.matmul(a, b), Err(DiffError::Shape { .. })));
        assert!(matches!(g.backward(a), Err(DiffError::NotScalar(_))));
        let big = g.constant(Tensor::scalar(1e308)).unwrap();
        assert!(matches!(g.scale(big, 10.0), Err(DiffError::NonFinite { .. })));
    }

    #[test]
    fn causal_mask_hides_future() {
        let mut g = Graph::new();
        let x = g.constant(mat(3, 2, 0.5)).unwrap();
        let base = g.attention(x, x, x, 1, true).unwrap();
        let first_row = g.value(base).row(0).to_vec();
        assert_eq!(first_row, g.value(x).row(0));
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let leaves = [
            mat(3, 4, 0.1),
            mat(4, 4, 0.7),
            mat(4, 4, 2.1),
            Tensor::vector(vec![1.0, 0.9, 1.1, 1.2]),
            Tensor::vector(vec![0.0, 0.1, -0.1, 0.2]),
            mat(8, 5, 3.3),
            Tensor::scalar(0.3),
        ];
        let report = gradient_check(
            |g, v| {
                let x = g.add_positional(v[0])?;
                let q = g.matmul(x, v[1])?;
                let k = g.matmul(x, v[2])?;
                let a = g.attention(q, k, x, 2, true)?;
                let h = g.add(a, x)?;
                let h = g.layer_norm(h, v[3], v[4])?;
                let r = g.relu(h)?;
                let gate = g.sigmoid(v[6])?;
                let m = g.mix(gate, h, r)?;
                let c = g.concat(&[m, x])?;
                let c = g.gather_rows(c, &[2, 0, 2])?;
                let c = g.linear(c, v[5], None)?;
                let lp = g.log_softmax(c)?;
                g.soft_target_kl(lp, vec![0.2; 15], vec![1.0, 0.5, 2.0], 3.0)
            },
            &leaves,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    fn linear_combo(a: f64, b: f64, x: &Tensor, w: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.param(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        let y = g.matmul(xv, wv).unwrap();
        let f = {
            let s = g.sigmoid(y).unwrap();
            g.sum(s).unwrap()
        };
        let h = {
            let lp = g.log_softmax(y).unwrap();
            g.mean(lp).unwrap()
        };
        let fa = g.scale(f, a).unwrap();
        let hb = g.scale(h, b).unwrap();
        let loss = g.add(fa, hb).unwrap();
        g.backward(loss).unwrap();
        g.grad(xv).unwrap().to_vec()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0.0f64..10.0) {
            let x = mat(2, 3, seed);
            let w = mat(3, 3, seed + 1.0);
            let combo = linear_combo(a, b, &x, &w);
            let gf = linear_combo(1.0, 0.0, &x, &w);
            let gh = linear_combo(0.0, 1.0, &x, &w);
            for i in 0..combo.len() {
                prop_assert!((combo[i] - (a * gf[i] + b * gh[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_and_backward_are_deterministic(seed in 0.0f64..10.0) {
            let x = mat(2, 3, seed);
            let w = mat(3, 3, seed + 1.0);
            let g1 = linear_combo(0.7, -1.1, &x, &w);
            let g2 = linear_combo(0.7, -1.1, &x, &w);
            prop_assert_eq!(
                g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
