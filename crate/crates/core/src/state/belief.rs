use nalgebra::{DMatrix, DVector, Vector3};

use super::{rotation, InstanceId, StateError};
use crate::models::imu::{ImuState, IMU_ERROR_DIM};

/// Eigenvalue floor below which a covariance is rejected.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Nominal state of one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum StateMean {
    Imu(ImuState),
    /// Stationary anchor position in the global frame.
    Position(Vector3<f64>),
}

impl StateMean {
    pub fn error_dim(&self) -> usize {
        match self {
            StateMean::Imu(_) => IMU_ERROR_DIM,
            StateMean::Position(_) => 3,
        }
    }

    pub fn as_imu(&self) -> Option<&ImuState> {
        match self {
            StateMean::Imu(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_position(&self) -> Option<&Vector3<f64>> {
        match self {
            StateMean::Position(p) => Some(p),
            _ => None,
        }
    }
}

/// `x ⊕ δ`: additive on vector blocks, right-multiplicative on orientation.
pub fn boxplus(mean: &StateMean, delta: &DVector<f64>) -> Result<StateMean, StateError> {
    if delta.len() != mean.error_dim() {
        return Err(StateError::DimensionMismatch { expected: mean.error_dim(), actual: delta.len() });
    }
    Ok(match mean {
        StateMean::Imu(s) => {
            let d = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
            StateMean::Imu(ImuState {
                position: s.position + d(0),
                velocity: s.velocity + d(3),
                orientation: rotation::compose(&s.orientation, &rotation::exp(&d(6))),
                gyro_bias: s.gyro_bias + d(9),
                accel_bias: s.accel_bias + d(12),
            })
        }
        StateMean::Position(p) => StateMean::Position(p + Vector3::new(delta[0], delta[1], delta[2])),
    })
}

/// `a ⊖ b`: the error `δ` with `b ⊕ δ = a`.
pub fn boxminus(a: &StateMean, b: &StateMean) -> Result<DVector<f64>, StateError> {
    match (a, b) {
        (StateMean::Imu(a), StateMean::Imu(b)) => {
            let mut d = DVector::zeros(IMU_ERROR_DIM);
            d.fixed_rows_mut::<3>(0).copy_from(&(a.position - b.position));
            d.fixed_rows_mut::<3>(3).copy_from(&(a.velocity - b.velocity));
            d.fixed_rows_mut::<3>(6)
                .copy_from(&rotation::log(&(b.orientation.inverse() * a.orientation)));
            d.fixed_rows_mut::<3>(9).copy_from(&(a.gyro_bias - b.gyro_bias));
            d.fixed_rows_mut::<3>(12).copy_from(&(a.accel_bias - b.accel_bias));
            Ok(d)
        }
        (StateMean::Position(a), StateMean::Position(b)) => Ok(DVector::from_column_slice((a - b).as_slice())),
        _ => Err(StateError::DimensionMismatch { expected: b.error_dim(), actual: a.error_dim() }),
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty one).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

pub fn is_psd(m: &DMatrix<f64>, tolerance: f64) -> bool {
    m.is_square() && min_eigenvalue(m) >= -tolerance
}

/// Estimate of one instance's state at a timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub instance_id: InstanceId,
    pub timestamp: f64,
    pub mean: StateMean,
    pub covariance: DMatrix<f64>,
}

impl Belief {
    /// Validates dimensions, finiteness and positive semi-definiteness; the
    /// covariance is symmetrized.
    pub fn new(
        instance_id: InstanceId,
        timestamp: f64,
        mean: StateMean,
        mut covariance: DMatrix<f64>,
    ) -> Result<Self, StateError> {
        let n = mean.error_dim();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(StateError::DimensionMismatch { expected: n, actual: covariance.nrows() });
        }
        if !timestamp.is_finite() {
            return Err(StateError::NonFinite("timestamp"));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(StateError::NonFinite("covariance"));
        }
        symmetrize(&mut covariance);
        let min_eigenvalue = min_eigenvalue(&covariance);
        if min_eigenvalue < -PSD_TOLERANCE {
            return Err(StateError::NotPsd { min_eigenvalue });
        }
        Ok(Self { instance_id, timestamp, mean, covariance })
    }

    pub fn error_dim(&self) -> usize {
        self.mean.error_dim()
    }
}
