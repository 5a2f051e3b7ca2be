use nalgebra::{DMatrix, DVector, RowVector3, Vector3};

use super::imu::{ImuState, IMU_ERROR_DIM, POS, ROT};
use super::{JacobianBlock, LinearizedObservation, ModelError};
use crate::state::rotation::skew;
use crate::state::InstanceId;

/// Temperature lapse rate, K/m.
pub const LAPSE_RATE: f64 = 0.0065;
/// Universal gas constant, J/(mol·K).
pub const GAS_CONSTANT: f64 = 8.31446;
/// Molar mass of dry air, kg/mol.
pub const MOLAR_MASS_AIR: f64 = 0.0289644;
/// Standard gravity used by the barometric formula, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

pub const SEA_LEVEL_PRESSURE: f64 = 101_325.0;
pub const SEA_LEVEL_TEMPERATURE: f64 = 288.15;

fn exponent() -> f64 {
    GAS_CONSTANT * LAPSE_RATE / (STANDARD_GRAVITY * MOLAR_MASS_AIR)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaroParams {
    /// Sensor position in the IMU frame, m.
    pub lever_arm: Vector3<f64>,
    /// Pressure at zero relative height, Pa.
    pub reference_pressure: f64,
    /// Temperature at zero relative height, K.
    pub reference_temperature: f64,
    /// Pressure noise 1σ, Pa.
    pub sigma_pressure: f64,
}

impl Default for BaroParams {
    fn default() -> Self {
        Self {
            lever_arm: Vector3::zeros(),
            reference_pressure: SEA_LEVEL_PRESSURE,
            reference_temperature: SEA_LEVEL_TEMPERATURE,
            sigma_pressure: 1.0,
        }
    }
}

impl BaroParams {
    /// Relative height of a pressure reading (international barometric formula).
    pub fn height(&self, pressure: f64) -> f64 {
        self.reference_temperature / LAPSE_RATE
            * (1.0 - (pressure / self.reference_pressure).powf(exponent()))
    }

    /// Inverse of [`Self::height`].
    pub fn pressure(&self, height: f64) -> f64 {
        self.reference_pressure * (1.0 - LAPSE_RATE * height / self.reference_temperature).powf(1.0 / exponent())
    }

    /// `dh/dP` at `pressure`, m/Pa.
    pub fn height_sensitivity(&self, pressure: f64) -> f64 {
        let e = exponent();
        -self.reference_temperature / LAPSE_RATE * e * (pressure / self.reference_pressure).powf(e - 1.0)
            / self.reference_pressure
    }
}

/// Estimated height of the pressure sensor: `(p + R·p_IP)_z`.
pub fn predicted_height(state: &ImuState, params: &BaroParams) -> f64 {
    (state.position + state.orientation * params.lever_arm).z
}

/// Height observation from a pressure reading; `pressure_variance` is in Pa².
pub fn baro_height_observation(
    imu: InstanceId,
    state: &ImuState,
    params: &BaroParams,
    pressure: f64,
    pressure_variance: f64,
) -> Result<LinearizedObservation, ModelError> {
    if !pressure.is_finite() {
        return Err(ModelError::NonFinite("pressure"));
    }
    if pressure <= 0.0 {
        return Err(ModelError::NonPositivePressure(pressure));
    }
    let measured = params.height(pressure);
    let mut h = DMatrix::zeros(1, IMU_ERROR_DIM);
    h[(0, POS + 2)] = 1.0;
    let d_rot: RowVector3<f64> = -(RowVector3::new(0.0, 0.0, 1.0) * state.rotation() * skew(&params.lever_arm));
    h.fixed_view_mut::<1, 3>(0, ROT).copy_from(&d_rot);
    let sensitivity = params.height_sensitivity(pressure);
    Ok(LinearizedObservation {
        residual: DVector::from_element(1, measured - predicted_height(state, params)),
        blocks: vec![JacobianBlock { instance: imu, jacobian: h }],
        noise: DMatrix::from_element(1, 1, sensitivity * sensitivity * pressure_variance),
    })
}
