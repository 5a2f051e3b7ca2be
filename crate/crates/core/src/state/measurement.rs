use nalgebra::{DMatrix, DVector};

use super::{is_psd, InstanceId, StateError};

/// What a measurement observes; the sensor id of the record is the
/// originating instance (the initiator for ranges).
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementKind {
    Range { responder: InstanceId },
    Pressure,
    ZeroVelocity,
}

/// Timestamped measurement kept in the handler's measurement history.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub timestamp: f64,
    pub sensor_id: InstanceId,
    pub kind: MeasurementKind,
    pub z: DVector<f64>,
    pub noise: DMatrix<f64>,
}

impl MeasurementRecord {
    pub fn new(
        timestamp: f64,
        sensor_id: InstanceId,
        kind: MeasurementKind,
        z: DVector<f64>,
        noise: DMatrix<f64>,
    ) -> Result<Self, StateError> {
        if !timestamp.is_finite() {
            return Err(StateError::NonFinite("timestamp"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(StateError::NonFinite("measurement"));
        }
        if noise.nrows() != z.len() || noise.ncols() != z.len() {
            return Err(StateError::DimensionMismatch { expected: z.len(), actual: noise.nrows() });
        }
        if !is_psd(&noise, 0.0) {
            return Err(StateError::NotPsd { min_eigenvalue: super::belief::min_eigenvalue(&noise) });
        }
        Ok(Self { timestamp, sensor_id, kind, z, noise })
    }

    /// Range `z` in meters between `initiator` and `responder` with 1σ noise `sigma`.
    pub fn range(t: f64, initiator: InstanceId, responder: InstanceId, z: f64, sigma: f64) -> Result<Self, StateError> {
        Self::new(
            t,
            initiator,
            MeasurementKind::Range { responder },
            DVector::from_element(1, z),
            DMatrix::from_element(1, 1, sigma * sigma),
        )
    }

    /// Static pressure in Pa with 1σ noise `sigma` in Pa.
    pub fn pressure(t: f64, sensor: InstanceId, pressure: f64, sigma: f64) -> Result<Self, StateError> {
        Self::new(
            t,
            sensor,
            MeasurementKind::Pressure,
            DVector::from_element(1, pressure),
            DMatrix::from_element(1, 1, sigma * sigma),
        )
    }

    /// Zero acceleration and angular-rate pseudo measurement.
    pub fn zero_velocity(t: f64, imu: InstanceId, sigma_accel: f64, sigma_gyro: f64) -> Result<Self, StateError> {
        let mut noise = DMatrix::zeros(6, 6);
        for i in 0..3 {
            noise[(i, i)] = sigma_accel * sigma_accel;
            noise[(i + 3, i + 3)] = sigma_gyro * sigma_gyro;
        }
        Self::new(t, imu, MeasurementKind::ZeroVelocity, DVector::zeros(6), noise)
    }

    /// Instances referenced by the measurement.
    pub fn referenced(&self) -> Vec<InstanceId> {
        match self.kind {
            MeasurementKind::Range { responder } => vec![self.sensor_id, responder],
            _ => vec![self.sensor_id],
        }
    }
}
