use nalgebra::{DMatrix, DVector, Matrix3};

use super::imu::{ImuReading, ImuState, ACCEL_BIAS, GRAVITY, GYRO_BIAS, IMU_ERROR_DIM, ROT};
use super::{JacobianBlock, LinearizedObservation, ModelError};
use crate::state::rotation::skew;
use crate::state::InstanceId;

/// Specific force at rest, opposite to gravity.
fn rest_specific_force() -> nalgebra::Vector3<f64> {
    -GRAVITY
}

/// Predicted zero-velocity pseudo measurement `[a# - Rᵀf - b_a; ω# - b_ω]`
/// with `f = -g` the specific force an accelerometer reads at rest.
pub fn zupt_prediction(state: &ImuState, reading: &ImuReading) -> DVector<f64> {
    let a = reading.accel - state.rotation().transpose() * rest_specific_force() - state.accel_bias;
    let w = reading.gyro - state.gyro_bias;
    DVector::from_iterator(6, a.iter().chain(w.iter()).copied())
}

/// Stand-still pseudo observation asserting zero body acceleration and rate.
/// `noise` is the 6×6 covariance of the stacked accelerometer/gyro residual.
pub fn zupt_observation(
    imu: InstanceId,
    state: &ImuState,
    reading: &ImuReading,
    noise: DMatrix<f64>,
) -> Result<LinearizedObservation, ModelError> {
    if !reading.is_finite() {
        return Err(ModelError::NonFinite("imu reading"));
    }
    let mut h = DMatrix::zeros(6, IMU_ERROR_DIM);
    let f_body = state.rotation().transpose() * rest_specific_force();
    h.fixed_view_mut::<3, 3>(0, ROT).copy_from(&(-skew(&f_body)));
    h.fixed_view_mut::<3, 3>(0, ACCEL_BIAS).copy_from(&(-Matrix3::identity()));
    h.fixed_view_mut::<3, 3>(3, GYRO_BIAS).copy_from(&(-Matrix3::identity()));
    Ok(LinearizedObservation {
        residual: -zupt_prediction(state, reading),
        blocks: vec![JacobianBlock { instance: imu, jacobian: h }],
        noise,
    })
}
