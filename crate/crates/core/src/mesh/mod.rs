//! Fully-meshed SDS-TWR TDMA schedule and range synthesis.
//!
//! Every node initiates a two-way ranging exchange with every other node once
//! per cycle, in ascending id order, so a cycle has `N(N-1)` slots of fixed
//! duration.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::models::RangeBiasTable;
use crate::state::{InstanceId, PoseSource};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest admissible clock frequency offset (100 ppm).
pub const MAX_CLOCK_OFFSET: f64 = 100e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node id {0} is invalid or duplicated")]
    InvalidNode(InstanceId),
    #[error("slot duration must be positive, got {0}")]
    InvalidSlotDuration(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("clock offset {0} exceeds 100 ppm")]
    ClockOffset(f64),
    #[error("noise standard deviation must be non-negative, got {0}")]
    InvalidNoise(f64),
}

/// Cycle rate of the mesh: `1 / (Δt (N-1)²)`.
pub fn mesh_cycle_rate(nodes: usize, slot_duration: f64) -> Result<f64, MeshError> {
    if nodes < 2 {
        return Err(MeshError::TooFewNodes(nodes));
    }
    if !(slot_duration > 0.0) {
        return Err(MeshError::InvalidSlotDuration(slot_duration));
    }
    let k = (nodes - 1) as f64;
    Ok(1.0 / (slot_duration * k * k))
}

/// Cycle rate closed-form value next to the rate implied by counting slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshRateReport {
    pub nodes: usize,
    pub slot_duration: f64,
    /// `1 / (Δt (N-1)²)`.
    pub formula_rate: f64,
    /// `1 / (Δt N (N-1))`, from the literal schedule.
    pub schedule_rate: f64,
    pub slots_per_cycle: usize,
}

impl MeshRateReport {
    pub fn new(nodes: usize, slot_duration: f64) -> Result<Self, MeshError> {
        let formula_rate = mesh_cycle_rate(nodes, slot_duration)?;
        let slots_per_cycle = nodes * (nodes - 1);
        Ok(Self {
            nodes,
            slot_duration,
            formula_rate,
            schedule_rate: 1.0 / (slots_per_cycle as f64 * slot_duration),
            slots_per_cycle,
        })
    }

    /// `formula_rate / schedule_rate`, which equals `N / (N-1)`.
    pub fn discrepancy(&self) -> f64 {
        self.formula_rate / self.schedule_rate
    }
}

impl fmt::Display for MeshRateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "nodes={} slot={}s formula_rate={:.6}Hz schedule_rate={:.6}Hz slots={} discrepancy={:.6} (N/(N-1))",
            self.nodes,
            self.slot_duration,
            self.formula_rate,
            self.schedule_rate,
            self.slots_per_cycle,
            self.discrepancy()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshConfig {
    node_ids: Vec<InstanceId>,
    slot_duration: f64,
    drop_probability: f64,
}

impl MeshConfig {
    /// Node ids are sorted; they must be valid and unique.
    pub fn new(mut node_ids: Vec<InstanceId>, slot_duration: f64, drop_probability: f64) -> Result<Self, MeshError> {
        if node_ids.len() < 2 {
            return Err(MeshError::TooFewNodes(node_ids.len()));
        }
        node_ids.sort();
        for w in node_ids.windows(2) {
            if w[0] == w[1] {
                return Err(MeshError::InvalidNode(w[0]));
            }
        }
        if let Some(bad) = node_ids.iter().find(|id| !id.is_valid()) {
            return Err(MeshError::InvalidNode(*bad));
        }
        if !(slot_duration > 0.0) || !slot_duration.is_finite() {
            return Err(MeshError::InvalidSlotDuration(slot_duration));
        }
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(MeshError::InvalidProbability(drop_probability));
        }
        Ok(Self { node_ids, slot_duration, drop_probability })
    }

    pub fn node_ids(&self) -> &[InstanceId] {
        &self.node_ids
    }

    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    pub fn drop_probability(&self) -> f64 {
        self.drop_probability
    }

    pub fn slots_per_cycle(&self) -> usize {
        let n = self.node_ids.len();
        n * (n - 1)
    }

    pub fn cycle_duration(&self) -> f64 {
        self.slots_per_cycle() as f64 * self.slot_duration
    }

    pub fn rate_report(&self) -> MeshRateReport {
        MeshRateReport::new(self.node_ids.len(), self.slot_duration).expect("validated config")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slot {
    pub t: f64,
    pub initiator: InstanceId,
    pub responder: InstanceId,
}

/// Slots of one cycle; slot `k` starts at `cycle_start + k·Δt`.
pub fn schedule_cycle(config: &MeshConfig, cycle_start: f64) -> Vec<Slot> {
    let ids = &config.node_ids;
    let mut slots = Vec::with_capacity(config.slots_per_cycle());
    for &initiator in ids {
        for &responder in ids.iter().filter(|&&r| r != initiator) {
            let k = slots.len() as f64;
            slots.push(Slot { t: cycle_start + k * config.slot_duration, initiator, responder });
        }
    }
    slots
}

/// Time-of-flight error of SDS-TWR with dimensionless clock offsets.
pub fn sds_twr_bias(xi_aba: f64, xi_bab: f64, reply_time: f64) -> f64 {
    0.25 * (xi_aba - xi_bab) * reply_time
}

/// Per-node clock frequency offsets (dimensionless) with a common reply time.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockModel {
    offsets: BTreeMap<InstanceId, f64>,
    reply_time: f64,
}

impl ClockModel {
    pub fn new(reply_time: f64) -> Self {
        Self { offsets: BTreeMap::new(), reply_time }
    }

    pub fn set_offset(&mut self, id: InstanceId, xi: f64) -> Result<(), MeshError> {
        if !(xi.abs() < MAX_CLOCK_OFFSET) {
            return Err(MeshError::ClockOffset(xi));
        }
        self.offsets.insert(id, xi);
        Ok(())
    }

    pub fn offset(&self, id: InstanceId) -> f64 {
        self.offsets.get(&id).copied().unwrap_or(0.0)
    }

    pub fn reply_time(&self) -> f64 {
        self.reply_time
    }

    /// Range error in metres of an exchange initiated by `initiator`.
    pub fn range_error(&self, initiator: InstanceId, responder: InstanceId) -> f64 {
        SPEED_OF_LIGHT * sds_twr_bias(self.offset(initiator), self.offset(responder), self.reply_time)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeSample {
    pub t: f64,
    pub initiator: InstanceId,
    pub responder: InstanceId,
    pub range: f64,
}

/// With probability `probability` a range is replaced by the true distance
/// plus a uniform positive error in `[min_error, max_error]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierModel {
    pub probability: f64,
    pub min_error: f64,
    pub max_error: f64,
}

impl OutlierModel {
    pub fn new(probability: f64) -> Result<Self, MeshError> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(MeshError::InvalidProbability(probability));
        }
        Ok(Self { probability, min_error: 0.5, max_error: 3.0 })
    }

    pub fn none() -> Self {
        Self { probability: 0.0, min_error: 0.5, max_error: 3.0 }
    }
}

/// Where each mesh node is: tags ride on the body, anchors are fixed.
#[derive(Clone, Debug, Default)]
pub struct NodeLayout {
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    pub anchors: BTreeMap<InstanceId, Vector3<f64>>,
}

impl NodeLayout {
    pub fn position(&self, id: InstanceId, t: f64, body: &dyn PoseSource) -> Option<Vector3<f64>> {
        if let Some(p) = self.anchors.get(&id) {
            return Some(*p);
        }
        let lever = self.tags.get(&id)?;
        body.pose_at(t).map(|pose| pose.transform_point(lever))
    }
}

#[derive(Clone, Debug, Default)]
pub struct MeshOutput {
    pub samples: Vec<RangeSample>,
    /// Parallel to `samples`.
    pub outlier: Vec<bool>,
    pub dropped: usize,
    pub skipped: usize,
    pub cycles: usize,
}

/// Range synthesis parameters.
#[derive(Clone, Debug)]
pub struct RangeSynthesis<'a> {
    pub layout: &'a NodeLayout,
    pub biases: &'a RangeBiasTable,
    pub sigma: f64,
    pub outliers: OutlierModel,
}

/// Runs whole cycles inside `[start, end]`, emitting one sample per slot.
pub fn simulate_mesh<R: Rng + ?Sized>(
    config: &MeshConfig,
    body: &dyn PoseSource,
    synthesis: &RangeSynthesis<'_>,
    start: f64,
    end: f64,
    rng: &mut R,
) -> Result<MeshOutput, MeshError> {
    if !(synthesis.sigma >= 0.0) {
        return Err(MeshError::InvalidNoise(synthesis.sigma));
    }
    let noise = (synthesis.sigma > 0.0).then(|| Normal::new(0.0, synthesis.sigma).expect("positive sigma"));
    let cycle = config.cycle_duration();
    let cycles = if end >= start { ((end - start) / cycle + 1e-9).floor() as usize } else { 0 };
    let mut out = MeshOutput { cycles, ..MeshOutput::default() };
    for c in 0..cycles {
        for slot in schedule_cycle(config, start + c as f64 * cycle) {
            if config.drop_probability > 0.0 && rng.random::<f64>() < config.drop_probability {
                out.dropped += 1;
                continue;
            }
            let (Some(a), Some(b)) = (
                synthesis.layout.position(slot.initiator, slot.t, body),
                synthesis.layout.position(slot.responder, slot.t, body),
            ) else {
                log::debug!("no position for slot {} -> {} at {}", slot.initiator, slot.responder, slot.t);
                out.skipped += 1;
                continue;
            };
            let d = (a - b).norm();
            let is_outlier =
                synthesis.outliers.probability > 0.0 && rng.random::<f64>() < synthesis.outliers.probability;
            let range = if is_outlier {
                d + rng.random_range(synthesis.outliers.min_error..=synthesis.outliers.max_error)
            } else {
                let nu = noise.map_or(0.0, |n| n.sample(rng));
                synthesis.biases.get(slot.initiator, slot.responder).apply(d) + nu
            };
            out.samples.push(RangeSample { t: slot.t, initiator: slot.initiator, responder: slot.responder, range });
            out.outlier.push(is_outlier);
        }
    }
    Ok(out)
}
