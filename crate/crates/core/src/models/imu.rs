use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

use super::ModelError;
use crate::state::rotation::{self, Quat};

pub const IMU_ERROR_DIM: usize = 15;

/// Error-state block offsets, in state order.
pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ROT: usize = 6;
pub const GYRO_BIAS: usize = 9;
pub const ACCEL_BIAS: usize = 12;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

pub const MAX_TIME_STEP: f64 = 0.1;

pub type Matrix15 = SMatrix<f64, 15, 15>;

/// IMU navigation state: position, velocity and orientation of the IMU in the
/// global frame, then gyroscope and accelerometer biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: Quat,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl ImuState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            orientation: Quat::identity(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuReading {
    pub t: f64,
    /// Specific force in the body frame, m/s².
    pub accel: Vector3<f64>,
    /// Angular rate in the body frame, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuReading {
    pub fn new(t: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { t, accel, gyro }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
    }
}

/// Continuous-time noise densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_noise_density: 2.0e-3,
            gyro_noise_density: 1.7e-4,
            accel_bias_walk: 3.0e-4,
            gyro_bias_walk: 2.0e-5,
        }
    }
}

impl ImuNoise {
    pub fn zero() -> Self {
        Self { accel_noise_density: 0.0, gyro_noise_density: 0.0, accel_bias_walk: 0.0, gyro_bias_walk: 0.0 }
    }
}

/// First-order strapdown step with an exact quaternion increment.
pub fn propagate_mean(state: &ImuState, reading: &ImuReading, dt: f64) -> ImuState {
    let omega = reading.gyro - state.gyro_bias;
    let accel = reading.accel - state.accel_bias;
    let acc_global = state.orientation * accel + GRAVITY;
    ImuState {
        position: state.position + state.velocity * dt + 0.5 * acc_global * dt * dt,
        velocity: state.velocity + acc_global * dt,
        orientation: rotation::compose(&state.orientation, &rotation::exp(&(omega * dt))),
        gyro_bias: state.gyro_bias,
        accel_bias: state.accel_bias,
    }
}

/// Error-state transition of [`propagate_mean`].
pub fn transition_matrix(state: &ImuState, reading: &ImuReading, dt: f64) -> Matrix15 {
    let omega_dt = (reading.gyro - state.gyro_bias) * dt;
    let accel = reading.accel - state.accel_bias;
    let r = state.rotation();
    let r_ax = r * rotation::skew(&accel);
    let i3 = Matrix3::identity();

    let mut phi = Matrix15::identity();
    phi.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(i3 * dt));
    phi.fixed_view_mut::<3, 3>(POS, ROT).copy_from(&(-0.5 * r_ax * dt * dt));
    phi.fixed_view_mut::<3, 3>(POS, ACCEL_BIAS).copy_from(&(-0.5 * r * dt * dt));
    phi.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&(-r_ax * dt));
    phi.fixed_view_mut::<3, 3>(VEL, ACCEL_BIAS).copy_from(&(-r * dt));
    phi.fixed_view_mut::<3, 3>(ROT, ROT)
        .copy_from(&rotation::exp(&omega_dt).to_rotation_matrix().into_inner().transpose());
    phi.fixed_view_mut::<3, 3>(ROT, GYRO_BIAS).copy_from(&(-rotation::right_jacobian(&omega_dt) * dt));
    phi
}

/// Discrete process noise for one step of length `dt`.
pub fn process_noise(noise: &ImuNoise, dt: f64) -> Matrix15 {
    let mut q = Matrix15::zeros();
    let blocks = [
        (VEL, noise.accel_noise_density),
        (ROT, noise.gyro_noise_density),
        (GYRO_BIAS, noise.gyro_bias_walk),
        (ACCEL_BIAS, noise.accel_bias_walk),
    ];
    for (offset, density) in blocks {
        for i in 0..3 {
            q[(offset + i, offset + i)] = density * density * dt;
        }
    }
    q
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub state: ImuState,
    pub covariance: DMatrix<f64>,
    pub transition: Matrix15,
}

/// Propagates mean and covariance: `Σ ← ΦΣΦᵀ + Q`.
pub fn imu_propagate(
    state: &ImuState,
    covariance: &DMatrix<f64>,
    reading: &ImuReading,
    dt: f64,
    noise: &ImuNoise,
) -> Result<Propagation, ModelError> {
    if !(dt > 0.0 && dt <= MAX_TIME_STEP) {
        return Err(ModelError::InvalidTimeStep(dt));
    }
    if !reading.is_finite() {
        return Err(ModelError::NonFinite("imu reading"));
    }
    let phi = transition_matrix(state, reading, dt);
    let p = Matrix15::from_iterator(covariance.iter().copied());
    let mut cov = phi * p * phi.transpose() + process_noise(noise, dt);
    cov = 0.5 * (cov + cov.transpose());
    Ok(Propagation {
        state: propagate_mean(state, reading, dt),
        covariance: DMatrix::from_iterator(15, 15, cov.iter().copied()),
        transition: phi,
    })
}
