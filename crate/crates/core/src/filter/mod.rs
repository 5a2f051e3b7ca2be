//! The instance handler: runtime registration of sensor instances and
//! decoupled EKF propagation/update with out-of-sequence replay.
//!
//! Every stateful instance (the IMU and each anchor) keeps its own belief
//! history and one factor history per other stateful instance, such that
//! `Σ_ij = S_ij · S_jiᵀ`. After an exact joint update the pair is
//! re-factorized with the lower id holding the full block and the higher id
//! holding the identity.

mod handler;
mod instance;

pub use handler::{Event, HandlerConfig, InstanceHandler, JointCovariance};
pub use instance::{Diagnostics, InstanceConstants, SensorInstance, SensorType, Strategy, UpdateOutcome};

use crate::models::ModelError;
use crate::state::{InstanceId, StateError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("instance id {0} must be greater than zero")]
    InvalidId(InstanceId),
    #[error("instance {0} already registered")]
    DuplicateInstance(InstanceId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("instance {0}: {1}")]
    InvalidBelief(InstanceId, String),
    #[error("a propagation sensor is already registered ({0})")]
    SecondPropagationSensor(InstanceId),
    #[error("cannot remove the propagation sensor {0}")]
    RemovePropagationSensor(InstanceId),
    #[error("no propagation sensor registered")]
    NoPropagationSensor,
    #[error("out-of-sequence IMU reading at {t} (last {last})")]
    OutOfSequenceImu { t: f64, last: f64 },
    #[error("unsupported measurement: {0}")]
    UnsupportedMeasurement(String),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
