//! Central finite-difference gradient checking.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the analytic adjoints it is checking.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

/// Which coordinates of one leaf to perturb.
#[derive(Clone, Debug)]
pub enum Coords {
    All,
    Subset(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(leaf, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Relative error with a denominator floor, so coordinates whose true
/// derivative is zero are judged on absolute error `<= floor * tol`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` against central differences of step `step` for every
/// requested coordinate of every leaf.
pub fn check<F>(
    leaves: &[Tensor<f64>],
    coords: &[Coords],
    step: f64,
    floor: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if coords.len() != leaves.len() {
        return Err(invalid_arg!("one coordinate selection per leaf required"));
    }
    let mut graph = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| graph.param(t.clone())).collect();
    let root = f(&mut graph, &vars)?;
    graph.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, t)| {
            graph
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(graph);

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let r = f(&mut g, &vs)?;
        Ok(g.value(r).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, sel) in coords.iter().enumerate() {
        let idx: Vec<usize> = match sel {
            Coords::All => (0..leaves[li].numel()).collect(),
            Coords::Subset(v) => v.clone(),
        };
        for i in idx {
            let orig = leaves[li].data()[i];
            work[li].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[li].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[li].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[li].data()[i];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((li, i, a, numeric));
            }
        }
    }
    Ok(report)
}
