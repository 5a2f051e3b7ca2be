use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{HistoryCapacity, InstanceId, SlidingHistory, StateError};

/// `Σ_ij = S_ij · S_jiᵀ`.
pub fn reconstruct_cross(s_ij: &DMatrix<f64>, s_ji: &DMatrix<f64>) -> Result<DMatrix<f64>, StateError> {
    if s_ij.ncols() != s_ji.ncols() {
        return Err(StateError::DimensionMismatch { expected: s_ij.ncols(), actual: s_ji.ncols() });
    }
    Ok(s_ij * s_ji.transpose())
}

/// Factorized cross-covariance halves held by one instance, keyed by the
/// other instance, each with its own time history.
#[derive(Clone, Debug)]
pub struct FactorTable {
    owner: InstanceId,
    capacity: HistoryCapacity,
    entries: BTreeMap<InstanceId, SlidingHistory<DMatrix<f64>>>,
}

impl FactorTable {
    pub fn new(owner: InstanceId, capacity: HistoryCapacity) -> Self {
        Self { owner, capacity, entries: BTreeMap::new() }
    }

    pub fn owner(&self) -> InstanceId {
        self.owner
    }

    /// Latest factor `S_{owner,other}`.
    pub fn current(&self, other: InstanceId) -> Option<&DMatrix<f64>> {
        self.entries.get(&other).and_then(|h| h.latest()).map(|(_, s)| s)
    }

    /// Factor valid at time `t`.
    pub fn at(&self, other: InstanceId, t: f64) -> Result<&DMatrix<f64>, StateError> {
        self.entries
            .get(&other)
            .ok_or(StateError::NoBeliefAt(t))?
            .query(t)
            .map(|(_, s)| s)
    }

    pub fn set(&mut self, other: InstanceId, t: f64, factor: DMatrix<f64>) {
        let capacity = self.capacity;
        self.entries
            .entry(other)
            .or_insert_with(|| SlidingHistory::new(capacity))
            .insert(t, factor);
    }

    pub fn remove(&mut self, other: InstanceId) -> bool {
        self.entries.remove(&other).is_some()
    }

    pub fn others(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, other: InstanceId) -> bool {
        self.entries.contains_key(&other)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate_after(&mut self, t: f64) {
        for h in self.entries.values_mut() {
            h.truncate_after(t);
        }
    }
}
