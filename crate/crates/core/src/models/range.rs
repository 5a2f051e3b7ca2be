use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use super::imu::{ImuState, IMU_ERROR_DIM, POS, ROT};
use super::{JacobianBlock, LinearizedObservation, ModelError};
use crate::state::rotation::skew;
use crate::state::InstanceId;

/// Estimated distances below this are rejected as singular.
pub const MIN_RANGE: f64 = 0.1;

/// Pairwise range bias: `z = β·d + γ + ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeBias {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for RangeBias {
    fn default() -> Self {
        Self { gamma: 0.0, beta: 1.0 }
    }
}

impl RangeBias {
    pub fn new(gamma: f64, beta: f64) -> Result<Self, ModelError> {
        if !(gamma.is_finite() && beta.is_finite()) {
            return Err(ModelError::NonFinite("range bias"));
        }
        if beta <= 0.0 {
            return Err(ModelError::InvalidBias(beta));
        }
        Ok(Self { gamma, beta })
    }

    pub fn apply(&self, distance: f64) -> f64 {
        self.beta * distance + self.gamma
    }
}

/// Symmetric dictionary of pairwise biases; unknown pairs read as unbiased.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RangeBiasTable {
    entries: BTreeMap<(InstanceId, InstanceId), RangeBias>,
}

fn key(a: InstanceId, b: InstanceId) -> (InstanceId, InstanceId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl RangeBiasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: InstanceId, b: InstanceId, bias: RangeBias) -> Result<(), ModelError> {
        let bias = RangeBias::new(bias.gamma, bias.beta)?;
        self.entries.insert(key(a, b), bias);
        Ok(())
    }

    pub fn lookup(&self, a: InstanceId, b: InstanceId) -> Option<RangeBias> {
        self.entries.get(&key(a, b)).copied()
    }

    pub fn get(&self, a: InstanceId, b: InstanceId) -> RangeBias {
        self.lookup(a, b).unwrap_or_default()
    }

    pub fn remove_involving(&mut self, id: InstanceId) {
        self.entries.retain(|(a, b), _| *a != id && *b != id);
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, InstanceId, RangeBias)> + '_ {
        self.entries.iter().map(|((a, b), v)| (*a, *b, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Global tag position `p + R·p_IT`.
pub fn tag_position(state: &ImuState, lever_arm: &Vector3<f64>) -> Vector3<f64> {
    state.position + state.orientation * lever_arm
}

fn unit_direction(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<(f64, Vector3<f64>), ModelError> {
    let diff = to - from;
    let d = diff.norm();
    if !d.is_finite() {
        return Err(ModelError::NonFinite("position"));
    }
    if d < MIN_RANGE {
        return Err(ModelError::SingularGeometry { distance: d });
    }
    Ok((d, diff / d))
}

/// Range between a body-mounted tag and an anchor.
#[allow(clippy::too_many_arguments)]
pub fn range_observation_tag_anchor(
    imu: InstanceId,
    state: &ImuState,
    lever_arm: &Vector3<f64>,
    anchor: InstanceId,
    anchor_position: &Vector3<f64>,
    bias: RangeBias,
    z: f64,
    variance: f64,
) -> Result<LinearizedObservation, ModelError> {
    let tag = tag_position(state, lever_arm);
    let (d, u) = unit_direction(&tag, anchor_position)?;
    let ut: RowVector3<f64> = u.transpose();

    let mut h_imu = DMatrix::zeros(1, IMU_ERROR_DIM);
    h_imu.fixed_view_mut::<1, 3>(0, POS).copy_from(&(-bias.beta * ut));
    h_imu
        .fixed_view_mut::<1, 3>(0, ROT)
        .copy_from(&(bias.beta * ut * state.rotation() * skew(lever_arm)));
    let h_anchor = DMatrix::from_row_slice(1, 3, (bias.beta * ut).as_slice());

    Ok(LinearizedObservation {
        residual: DVector::from_element(1, z - bias.apply(d)),
        blocks: vec![
            JacobianBlock { instance: imu, jacobian: h_imu },
            JacobianBlock { instance: anchor, jacobian: h_anchor },
        ],
        noise: DMatrix::from_element(1, 1, variance),
    })
}

/// Range between two anchors.
#[allow(clippy::too_many_arguments)]
pub fn range_observation_anchor_anchor(
    anchor_i: InstanceId,
    position_i: &Vector3<f64>,
    anchor_j: InstanceId,
    position_j: &Vector3<f64>,
    bias: RangeBias,
    z: f64,
    variance: f64,
) -> Result<LinearizedObservation, ModelError> {
    let (d, u) = unit_direction(position_i, position_j)?;
    let row = bias.beta * u.transpose();
    Ok(LinearizedObservation {
        residual: DVector::from_element(1, z - bias.apply(d)),
        blocks: vec![
            JacobianBlock { instance: anchor_i, jacobian: DMatrix::from_row_slice(1, 3, (-row).as_slice()) },
            JacobianBlock { instance: anchor_j, jacobian: DMatrix::from_row_slice(1, 3, row.as_slice()) },
        ],
        noise: DMatrix::from_element(1, 1, variance),
    })
}
