//! Builds a small classifier graph by hand, backpropagates, and compares the
//! result against central finite differences.

use bmhrl::diffcore::{gradient_check, DiffError, Graph, Tensor, Var};

const TARGETS: [usize; 3] = [0, 3, 1];

fn nll(g: &mut Graph, x: Var, w: Var) -> Result<Var, DiffError> {
    let mut onehot = vec![0.0; 3 * 5];
    for (r, &c) in TARGETS.iter().enumerate() {
        onehot[r * 5 + c] = 1.0;
    }
    let onehot = g.constant(Tensor::matrix(3, 5, onehot)?)?;
    let h = g.matmul(x, w)?;
    let logp = g.log_softmax(h)?;
    let picked = g.mul(logp, onehot)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / TARGETS.len() as f64)
}

fn main() -> Result<(), DiffError> {
    let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w = Tensor::matrix(4, 5, (0..20).map(|i| (i as f64 * 0.21).cos() * 0.5).collect())?;

    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let wv = g.param(w.clone())?;
    let loss = nll(&mut g, xv, wv)?;
    g.backward(loss)?;
    println!("loss {:.6}", g.value(loss).item().unwrap());
    println!("dL/dw row 0: {:?}", &g.grad(wv).unwrap()[..5]);

    let report = gradient_check(|g, vars| nll(g, vars[0], vars[1]), &[x, w], 1e-4);
    println!(
        "checked {} coordinates, max relative error {:.2e}, passed: {}",
        report.checked(),
        report.max_rel_error(),
        report.passed()
    );
    Ok(())
}
