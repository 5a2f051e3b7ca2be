//! Error metrics and consistency bounds.

use nalgebra::{DMatrix, DVector, Vector3};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::SimError;
use crate::state::rotation::{angle_between, Quat};

/// Root mean square of the vector norms.
pub fn rmse(errors: &[Vector3<f64>]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Root mean square of scalars.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Geodesic angle of `R̂ᵀR` in degrees.
pub fn orientation_error_deg(estimate: &Quat, truth: &Quat) -> f64 {
    angle_between(estimate, truth).to_degrees()
}

/// `eᵀ Σ⁻¹ e`.
pub fn compute_nees(error: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64, SimError> {
    if covariance.nrows() != error.len() || covariance.ncols() != error.len() {
        return Err(SimError::SingularCovariance);
    }
    let chol = covariance.clone().cholesky().ok_or(SimError::SingularCovariance)?;
    Ok(error.dot(&chol.solve(error)))
}

/// Quantile of the chi-square distribution.
pub fn chi2_quantile(probability: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(probability)
}

/// Single-sample 3-dof bound at 99.7 %.
pub fn nees_bound_3dof() -> f64 {
    chi2_quantile(0.997, 3)
}

/// Two-sided interval of the average NEES over `runs` independent runs.
pub fn average_nees_interval(dof: usize, runs: usize, probability: f64) -> (f64, f64) {
    let total = dof * runs;
    let tail = 0.5 * (1.0 - probability);
    (chi2_quantile(tail, total) / runs as f64, chi2_quantile(1.0 - tail, total) / runs as f64)
}
