//! Central finite-difference check of hand-derived gradients.

use crate::error::{Error, Result};

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// A scalar function with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &[f64]) -> f64;
    fn gradient(&self, params: &[f64]) -> Vec<f64>;
    /// True when a step of `eps` along `coord` may cross a point where the
    /// function is not differentiable (a max/argmax tie, |x| at 0, a change
    /// of matching).
    fn near_kink(&self, _params: &[f64], _coord: usize, _eps: f64) -> bool {
        false
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    pub skipped: Vec<usize>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient with `(f(p+eps) − f(p−eps)) / 2eps` on the
/// listed coordinates.
pub fn grad_check(obj: &impl Objective, params: &[f64], coords: &[usize], eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Validation(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    let analytic = obj.gradient(params);
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!("gradient has {} entries for {} params", analytic.len(), params.len())));
    }
    let mut report = GradCheckReport::default();
    let mut p = params.to_vec();
    for &c in coords {
        if c >= params.len() {
            return Err(Error::Validation(format!("coordinate {c} out of range")));
        }
        if obj.near_kink(params, c, eps) {
            report.skipped.push(c);
            continue;
        }
        p[c] = params[c] + eps;
        let plus = obj.value(&p);
        p[c] = params[c] - eps;
        let minus = obj.value(&p);
        p[c] = params[c];
        let err = relative_error(analytic[c], (plus - minus) / (2.0 * eps));
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(c);
        }
    }
    Ok(report)
}

/// Checks every coordinate.
pub fn grad_check_all(obj: &impl Objective, params: &[f64], eps: f64) -> Result<GradCheckReport> {
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check(obj, params, &coords, eps)
}
