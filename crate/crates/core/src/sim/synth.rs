//! IMU and barometer measurement synthesis.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::trajectory::SpiralTrajectory;
use super::SimError;
use crate::models::{BaroParams, ImuNoise, ImuReading, GRAVITY};

/// Noise and bias settings of the synthesized IMU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSynthesis {
    pub rate: f64,
    pub noise: ImuNoise,
    pub initial_gyro_bias: Vector3<f64>,
    pub initial_accel_bias: Vector3<f64>,
}

impl Default for ImuSynthesis {
    fn default() -> Self {
        Self {
            rate: 200.0,
            noise: ImuNoise::default(),
            initial_gyro_bias: Vector3::zeros(),
            initial_accel_bias: Vector3::zeros(),
        }
    }
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

pub(crate) fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| gaussian(rng, sigma))
}

/// Readings at `k / rate` for `k = 1..=duration·rate`:
/// `a# = Rᵀ(a - g) + b_a + n_a`, `ω# = ω + b_g + n_g`, with random-walk biases.
pub fn synthesize_imu<R: Rng + ?Sized>(
    trajectory: &SpiralTrajectory,
    config: &ImuSynthesis,
    rng: &mut R,
) -> Result<Vec<ImuReading>, SimError> {
    if !(config.rate >= 100.0) {
        return Err(SimError::InvalidRate(config.rate));
    }
    let dt = 1.0 / config.rate;
    let n = (trajectory.duration() * config.rate).round() as usize;
    let noise = &config.noise;
    let sd_accel = noise.accel_noise_density / dt.sqrt();
    let sd_gyro = noise.gyro_noise_density / dt.sqrt();
    let walk_accel = noise.accel_bias_walk * dt.sqrt();
    let walk_gyro = noise.gyro_bias_walk * dt.sqrt();
    let mut bias_a = config.initial_accel_bias;
    let mut bias_g = config.initial_gyro_bias;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let t = k as f64 * dt;
        let truth = trajectory.sample(t);
        let r = truth.pose.orientation.to_rotation_matrix();
        bias_a += gaussian3(rng, walk_accel);
        bias_g += gaussian3(rng, walk_gyro);
        let accel = r.transpose() * (truth.acceleration - GRAVITY) + bias_a + gaussian3(rng, sd_accel);
        let gyro = truth.angular_velocity + bias_g + gaussian3(rng, sd_gyro);
        out.push(ImuReading::new(t, accel, gyro));
    }
    Ok(out)
}

/// Pressure readings of a barometer at `lever_arm` in the body frame.
pub fn synthesize_baro<R: Rng + ?Sized>(
    trajectory: &SpiralTrajectory,
    params: &BaroParams,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>, SimError> {
    if !(rate > 0.0) {
        return Err(SimError::InvalidRate(rate));
    }
    let n = (trajectory.duration() * rate).round() as usize;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let t = k as f64 / rate;
        let height = trajectory.sample(t).pose.transform_point(&params.lever_arm).z;
        out.push((t, params.pressure(height) + gaussian(rng, params.sigma_pressure)));
    }
    Ok(out)
}
