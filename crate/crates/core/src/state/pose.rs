use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::Quat;

/// Position and orientation of a body frame in the global frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: Quat) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: Quat::identity() }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// Global position of a point given in the body frame.
    pub fn transform_point(&self, lever_arm: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * lever_arm
    }
}

/// Anything that can report a body pose at a time.
pub trait PoseSource {
    /// `None` when `t` is outside the covered window.
    fn pose_at(&self, t: f64) -> Option<Pose>;
}
