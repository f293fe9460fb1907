use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::DiffError;

/// Relative errors below this scale are treated as absolute; central
/// differences with step ~1e-5 carry ~1e-10 of numerical noise, so
/// gradients smaller than the floor cannot be meaningfully compared in
/// relative terms.
const REL_FLOOR: f64 = 1e-5;

/// Outcome of [`grad_check`]: per-parameter and overall worst relative error
/// between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
    pub step: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `build` must deterministically construct a scalar-rooted graph from leaf
/// nodes created for `params`, in order. Each parameter coordinate is
/// perturbed by `±step` and the function re-evaluated, so the cost is two
/// forward passes per coordinate.
///
/// The relative error of a pair `(a, n)` is `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn grad_check<F>(
    build: F,
    params: &[Tensor],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(DiffError::NonPositiveStep { step });
    }

    let analytic: Vec<Tensor> = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        g.backward(root)?;
        ids.iter().map(|&id| g.grad(id).clone()).collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        Ok(g.scalar_value(root))
    };

    let mut per_param = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        let mut worst = 0.0f64;
        for c in 0..params[p].len() {
            let orig = work[p].data()[c];
            work[p].data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[p].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        per_param.push(worst);
    }
    let max_rel_err = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        step,
        tol,
    })
}
