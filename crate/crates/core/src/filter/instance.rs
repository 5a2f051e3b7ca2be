use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::models::{BaroParams, ImuNoise, ModelError, RangeBias};
use crate::state::{Belief, FactorTable, InstanceId, SlidingHistory};

/// Fusion strategy, fixed per handler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Decoupled propagation: isolated prediction, updates on the full state.
    Dp,
    /// Decoupled approximated: updates only among directly involved instances.
    Dah,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Dp => "dp",
            Strategy::Dah => "dah",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Strategy::Dp),
            "dah" => Ok(Strategy::Dah),
            other => Err(format!("invalid strategy '{other}' (expected dp or dah)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorType {
    Imu,
    Barometer,
    UwbTag,
    UwbAnchor,
}

impl SensorType {
    /// Whether the instance carries an estimated state.
    pub fn is_stateful(self) -> bool {
        matches!(self, SensorType::Imu | SensorType::UwbAnchor)
    }
}

/// Type-specific constants handed over at registration.
#[derive(Clone, Debug, PartialEq)]
pub enum InstanceConstants {
    Imu(ImuNoise),
    Barometer(BaroParams),
    /// UWB tag rigidly attached to the IMU body at `lever_arm`.
    Tag { lever_arm: Vector3<f64> },
    /// UWB anchor with its dictionary of pairwise biases to other devices.
    Anchor { biases: Vec<(InstanceId, RangeBias)> },
}

impl InstanceConstants {
    pub fn sensor_type(&self) -> SensorType {
        match self {
            InstanceConstants::Imu(_) => SensorType::Imu,
            InstanceConstants::Barometer(_) => SensorType::Barometer,
            InstanceConstants::Tag { .. } => SensorType::UwbTag,
            InstanceConstants::Anchor { .. } => SensorType::UwbAnchor,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensorInstance {
    pub id: InstanceId,
    pub constants: InstanceConstants,
    /// Empty for stateless instances (tags, barometer).
    pub beliefs: SlidingHistory<Belief>,
    pub factors: FactorTable,
}

impl SensorInstance {
    pub fn sensor_type(&self) -> SensorType {
        self.constants.sensor_type()
    }

    pub fn belief(&self) -> Option<&Belief> {
        self.beliefs.latest().map(|(_, b)| b)
    }

    pub fn error_dim(&self) -> usize {
        self.belief().map_or(0, |b| b.error_dim())
    }
}

/// Result of submitting a measurement.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    Applied,
    /// Applied after rewinding; `replayed` later events were re-processed.
    Replayed { replayed: usize },
    /// Older than the history window.
    DroppedStale,
    /// Older than the last registration or removal.
    DroppedStructural,
    /// Rejected by the Mahalanobis gate.
    Gated,
    /// Rejected by the measurement model (e.g. singular geometry).
    Rejected(ModelError),
    /// Skipped because the innovation covariance was not positive definite,
    /// which DAH's approximate cross-covariances can cause.
    SingularInnovation,
    /// Carries no information for the filter (e.g. tag-to-tag range).
    Ignored,
}

impl UpdateOutcome {
    pub fn is_applied(&self) -> bool {
        matches!(self, UpdateOutcome::Applied | UpdateOutcome::Replayed { .. })
    }
}

/// Counters of measurements that did not take the normal path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub applied: usize,
    pub replays: usize,
    pub dropped_stale: usize,
    pub dropped_structural: usize,
    pub gated: usize,
    pub rejected: usize,
    pub singular: usize,
    pub ignored: usize,
}
