use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so that near-zero gradients are
/// compared on an absolute scale instead of amplifying round-off.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct LeafReport {
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tol: f64,
    pub encountered_nan: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.leaves.iter().fold(0.0, |m, l| m.max(l.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        !self.encountered_nan && self.max_rel_err() < self.tol
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, element by element, for every leaf.
///
/// `f` receives a fresh graph and the leaves registered as parameters, in order.
pub fn grad_check<F>(f: F, leaves: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut encountered_nan = false;
    let mut reports = Vec::with_capacity(leaves.len());
    let mut work: Vec<Tensor> = leaves.to_vec();
    for (li, &v) in vars.iter().enumerate() {
        let analytic = g
            .grad(v)
            .cloned()
            .unwrap_or_else(|| leaves[li].zeros_like());
        let mut rep = LeafReport {
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..leaves[li].numel() {
            let orig = leaves[li].data()[i];
            work[li].data_mut()[i] = orig + h;
            let up = eval(&work);
            work[li].data_mut()[i] = orig - h;
            let down = eval(&work);
            work[li].data_mut()[i] = orig;
            let (up, down) = match (up, down) {
                (Ok(u), Ok(d)) => (u, d),
                _ => {
                    encountered_nan = true;
                    continue;
                }
            };
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                encountered_nan = true;
                continue;
            }
            let e = rel_err(a, numeric);
            if e > rep.max_rel_err {
                rep = LeafReport {
                    max_rel_err: e,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        reports.push(rep);
    }
    Ok(GradCheckReport {
        leaves: reports,
        tol,
        encountered_nan,
    })
}
