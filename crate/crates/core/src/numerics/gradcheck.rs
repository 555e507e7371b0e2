use serde::Serialize;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter, element)` of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub pass: bool,
}

/// Checks the gradients returned by `f` against `(f(θ + h e_i) - f(θ - h e_i)) / 2h`
/// for every element of every parameter. The relative error of an entry is
/// `|a - b| / max(|a|, |b|, 1e-8)`; the check passes when the largest one is
/// below `tol`.
pub fn finite_diff_check<T, F>(mut f: F, params: &[Tensor<T>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(g, p)| g.shape() != p.shape()) {
        return Err(Error::shape("finite_diff_check", "gradients do not match parameters"));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        pass: true,
    };
    let mut probe: Vec<Tensor<T>> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for e in 0..params[p].len() {
            let original = params[p].data()[e];
            probe[p].data_mut()[e] = original + T::of(h);
            let plus = f(&probe)?.0.to_f64_lossy();
            probe[p].data_mut()[e] = original - T::of(h);
            let minus = f(&probe)?.0.to_f64_lossy();
            probe[p].data_mut()[e] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective around parameter {p}[{e}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let exact = grad.data()[e].to_f64_lossy();
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(1e-8);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
            report.checked += 1;
        }
    }
    report.pass = report.max_rel_error < tol;
    Ok(report)
}
