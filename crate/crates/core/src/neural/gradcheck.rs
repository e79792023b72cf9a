//! Central finite-difference verification of analytic gradients.

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(1, |a|, |n|)` over all checked entries.
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against `(f(p + h) - f(p - h)) / 2h` for every
/// entry of every parameter in `params`. The store is restored afterwards.
pub fn grad_check<F>(params: &mut ParamStore<f64>, analytic: &Gradients<f64>, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    grad_check_subset(params, analytic, step, usize::MAX, loss)
}

/// As [`grad_check`], visiting at most `per_tensor` evenly spaced entries of
/// each tensor.
pub fn grad_check_subset<F>(
    params: &mut ParamStore<f64>,
    analytic: &Gradients<f64>,
    step: f64,
    per_tensor: usize,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let len = params.get(id).len();
        let stride = len.div_ceil(per_tensor.max(1)).max(1);
        for i in (0..len).step_by(stride) {
            let orig = params.get(id).values()[i];
            params.get_mut(id).values_mut()[i] = orig + step;
            let plus = loss(params)?;
            params.get_mut(id).values_mut()[i] = orig - step;
            let minus = loss(params)?;
            params.get_mut(id).values_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteLoss(format!("{}[{i}] perturbed", params.name(id))));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g.values()[i]);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
