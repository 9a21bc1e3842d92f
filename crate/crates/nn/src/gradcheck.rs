//! Central finite-difference gradient checker.
//!
//! Independent of the tape: it only re-runs a forward closure on perturbed
//! parameter copies, so it can be used as an oracle for the analytic
//! backward pass.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::optim::ParamStore;

/// Denominator floor for relative error; below this both gradients are
/// effectively zero and the absolute difference is what is compared.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Round-off budget of one forward evaluation, relative to its magnitude.
/// A difference quotient smaller than `FORWARD_ROUNDOFF * |f| / eps` has no
/// significant digits left.
pub const FORWARD_ROUNDOFF: f64 = 4096.0 * f64::EPSILON;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Like [`relative_error`], but a pair of gradients that both lie below the
/// resolution of the difference quotient counts as agreeing. This matters for
/// structurally zero gradients such as attention key biases, whose numeric
/// estimate is pure cancellation noise.
pub fn relative_error_at(analytic: f64, numeric: f64, output: f64, eps: f64) -> f64 {
    let resolution = FORWARD_ROUNDOFF * output.abs().max(1.0) / eps;
    if analytic.abs() <= resolution && numeric.abs() <= resolution {
        return 0.0;
    }
    relative_error(analytic, numeric)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(p + eps) - f(p - eps)) / 2 eps` for every parameter entry.
pub fn check_params<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::eval();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let f0 = g.value(out)[0];
    let analytic = g.param_grads();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::eval();
        let out = f(&mut g, s)?;
        Ok(g.value(out)[0])
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = store.clone();
    for (name, grad) in &analytic {
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(name).expect("bound from store").values()[i];
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error_at(a, numeric, f0, eps);
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Same check for a differentiable input buffer; `f` receives the input
/// values and must bind them with [`Graph::variable`] as its first node.
pub fn check_input<F>(input: &[f64], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[f64]) -> Result<(NodeId, NodeId)>,
{
    let mut g = Graph::eval();
    let (x, out) = f(&mut g, input)?;
    g.backward(out)?;
    let f0 = g.value(out)[0];
    let analytic = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = input.to_vec();
    for i in 0..input.len() {
        let eval = |v: &[f64]| -> Result<f64> {
            let mut g = Graph::eval();
            let (_, out) = f(&mut g, v)?;
            Ok(g.value(out)[0])
        };
        probe[i] = input[i] + eps;
        let plus = eval(&probe)?;
        probe[i] = input[i] - eps;
        let minus = eval(&probe)?;
        probe[i] = input[i];
        let err = relative_error_at(analytic[i], (plus - minus) / (2.0 * eps), f0, eps);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(("input".into(), i));
        }
    }
    Ok(report)
}
