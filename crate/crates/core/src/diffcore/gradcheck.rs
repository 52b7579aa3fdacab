use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Graph, Tensor, Var};

/// Settings for [`gradient_check_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Denominator floor: the error is `|a − n| / max(|a|, |n|, floor)`, so
    /// coordinates whose true gradient is ~0 are judged absolutely.
    pub floor: f64,
    /// Check only this many coordinates, drawn uniformly over all leaves.
    pub sample: Option<(usize, u64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-4, floor: 1e-6, sample: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.leaves.iter().map(|l| l.checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.max_rel_error < self.tol)
    }
}

fn evaluate<F>(f: &F, leaves: &[Tensor]) -> Result<(Graph, Vec<Var>, Var), DiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    let mut g = Graph::new();
    let vars = leaves.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &vars)?;
    Ok((g, vars, loss))
}

/// Compares analytic gradients against central differences for every
/// coordinate of every leaf. A builder that fails (a shape error, or a
/// non-finite value at a perturbed point) counts as an infinite error.
pub fn gradient_check<F>(f: F, leaves: &[Tensor], tol: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    gradient_check_with(f, leaves, &GradCheckOptions { tol, ..GradCheckOptions::default() })
}

pub fn gradient_check_with<F>(f: F, leaves: &[Tensor], opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    let failed = |checked| LeafReport { checked, max_rel_error: f64::INFINITY, worst: None };
    let analytic: Vec<Vec<f64>> = match evaluate(&f, leaves).and_then(|(mut g, vars, loss)| {
        g.backward(loss)?;
        Ok(vars
            .iter()
            .zip(leaves)
            .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect())
    }) {
        Ok(a) => a,
        Err(_) => {
            return GradCheckReport { leaves: leaves.iter().map(|t| failed(t.len())).collect(), tol: opts.tol };
        }
    };

    let total: usize = leaves.iter().map(Tensor::len).sum();
    let mut coords: Vec<usize> = match opts.sample {
        Some((n, seed)) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, total, n).into_vec()
        }
        _ => (0..total).collect(),
    };
    coords.sort_unstable();

    let mut reports: Vec<LeafReport> =
        leaves.iter().map(|_| LeafReport { checked: 0, max_rel_error: 0.0, worst: None }).collect();
    let mut work: Vec<Tensor> = leaves.to_vec();
    let loss_at = |work: &[Tensor]| -> Option<f64> {
        let (g, _, loss) = evaluate(&f, work).ok()?;
        g.value(loss).item()
    };
    for flat in coords {
        let (mut leaf, mut idx) = (0, flat);
        while idx >= leaves[leaf].len() {
            idx -= leaves[leaf].len();
            leaf += 1;
        }
        let x0 = leaves[leaf].data()[idx];
        work[leaf].data_mut()[idx] = x0 + opts.eps;
        let plus = loss_at(&work);
        work[leaf].data_mut()[idx] = x0 - opts.eps;
        let minus = loss_at(&work);
        work[leaf].data_mut()[idx] = x0;

        let a = analytic[leaf][idx];
        let err = match (plus, minus) {
            (Some(p), Some(m)) => {
                let n = (p - m) / (2.0 * opts.eps);
                let e = (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
                (e, n)
            }
            _ => (f64::INFINITY, f64::NAN),
        };
        let r = &mut reports[leaf];
        r.checked += 1;
        if err.0 > r.max_rel_error || r.worst.is_none() {
            r.max_rel_error = r.max_rel_error.max(err.0);
            r.worst = Some((idx, a, err.1));
        }
    }
    GradCheckReport { leaves: reports, tol: opts.tol }
}
