//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step for float32 inputs.
pub const FD_STEP: f32 = 1e-3;

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)` where
/// `floor = REL_ERR_FLOOR * (largest gradient component)`. With float32
/// forward passes the finite-difference noise is absolute (about 1e-4 at
/// `h = 1e-3`), so small components are judged against the gradient's scale.
pub const REL_ERR_FLOOR: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compares `analytic` (the gradient of `loss` at `point`) against
/// `(loss(x + h e_i) - loss(x - h e_i)) / 2h` for every coordinate.
pub fn grad_check<F>(point: &Tensor, analytic: &[f32], loss: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(point, analytic, &all, loss, tolerance)
}

/// As [`grad_check`] but only perturbs the listed coordinates; the relative
/// error floor still uses the largest component of the full analytic gradient.
pub fn grad_check_at<F>(
    point: &Tensor,
    analytic: &[f32],
    indices: &[usize],
    mut loss: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(format!(
            "grad_check: analytic gradient has {} entries for {} inputs",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.clone();
    if let Some(&bad) = indices.iter().find(|&&i| i >= point.len()) {
        return Err(Error::shape(format!("grad_check: index {bad} out of range")));
    }
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in indices {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + FD_STEP;
        let up = loss(&probe)?;
        probe.data_mut()[i] = x0 - FD_STEP;
        let down = loss(&probe)?;
        probe.data_mut()[i] = x0;
        // the perturbation actually representable in f32
        let h = ((x0 + FD_STEP) as f64) - ((x0 - FD_STEP) as f64);
        numeric.push((up - down) / h);
    }
    let scale = analytic
        .iter()
        .map(|&a| (a as f64).abs())
        .chain(numeric.iter().map(|n: &f64| n.abs()))
        .fold(0.0f64, f64::max);
    let floor = (REL_ERR_FLOOR * scale).max(1e-8);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
        tolerance,
    };
    for (&i, &n) in indices.iter().zip(&numeric) {
        let a = analytic[i] as f64;
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    Ok(report)
}

/// `sum_i weights_i * values_i` accumulated in f64; the scalar probe loss used
/// to turn a tensor-valued op into something finite differences can check.
pub fn weighted_sum(values: &[f32], weights: &[f32]) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| v as f64 * w as f64)
        .sum()
}
