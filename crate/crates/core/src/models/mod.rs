//! Propagation and measurement models.
//!
//! Every observation model returns a [`LinearizedObservation`] whose Jacobian
//! blocks are expressed over the error states of the involved instances,
//! using the right-multiplicative orientation error `q = q̂ ⊗ exp(δθ)`.

pub mod baro;
pub mod imu;
mod observation;
pub mod range;
pub mod zupt;

pub use baro::{baro_height_observation, BaroParams};
pub use imu::{imu_propagate, ImuNoise, ImuReading, ImuState, Propagation, GRAVITY, IMU_ERROR_DIM};
pub use observation::{JacobianBlock, LinearizedObservation};
pub use range::{
    range_observation_anchor_anchor, range_observation_tag_anchor, tag_position, RangeBias, RangeBiasTable, MIN_RANGE,
};
pub use zupt::zupt_observation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("time step {0} s outside (0, 0.1]")]
    InvalidTimeStep(f64),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("non-positive pressure {0} Pa")]
    NonPositivePressure(f64),
    #[error("estimated distance {distance} m below singularity gate")]
    SingularGeometry { distance: f64 },
    #[error("range scale bias must be positive, got {0}")]
    InvalidBias(f64),
}
