use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (leaf index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compare reverse-mode gradients of a scalar function with central
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` for every coordinate of
/// every leaf.
///
/// `f` receives a fresh graph and one trainable [`Var`] per leaf, in order.
pub fn grad_check<F>(f: F, leaves: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor], grads: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), grads)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Usage(format!(
                "grad_check needs a scalar function, got shape {:?}",
                g.value(out).shape()
            )));
        }
        let value = g.value(out).item();
        if !grads {
            return Ok((value, vec![]));
        }
        g.backward(out)?;
        Ok((value, vars.iter().map(|&v| g.grad(v).cloned()).collect()))
    };

    let (_, analytic) = eval(leaves, true)?;
    let mut work = leaves.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for li in 0..leaves.len() {
        for k in 0..leaves[li].len() {
            let orig = leaves[li].data()[k];
            work[li].data_mut()[k] = orig + eps;
            let (fp, _) = eval(&work, false)?;
            work[li].data_mut()[k] = orig - eps;
            let (fm, _) = eval(&work, false)?;
            work[li].data_mut()[k] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[li].as_ref().map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (li, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
