//! Geometric and probabilistic primitives shared by every other module.

mod belief;
mod factor;
mod history;
mod measurement;
mod pose;
pub mod rotation;

pub use belief::{boxminus, boxplus, is_psd, symmetrize, Belief, StateMean};
pub use factor::{reconstruct_cross, FactorTable};
pub use history::{HistoryCapacity, SlidingHistory};
pub use measurement::{MeasurementKind, MeasurementRecord};
pub use pose::{Pose, PoseSource};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a sensor instance. Valid identifiers are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl InstanceId {
    pub fn is_valid(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for InstanceId {
    fn from(v: u32) -> Self {
        InstanceId(v)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no belief at time {0}")]
    NoBeliefAt(f64),
}
