use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::instance::{Diagnostics, InstanceConstants, SensorInstance, SensorType, Strategy, UpdateOutcome};
use super::FilterError;
use crate::models::imu::MAX_TIME_STEP;
use crate::models::{
    baro_height_observation, imu_propagate, range_observation_anchor_anchor, range_observation_tag_anchor,
    zupt_observation, ImuReading, LinearizedObservation, RangeBiasTable,
};
use crate::state::{
    boxplus, reconstruct_cross, symmetrize, Belief, FactorTable, HistoryCapacity, InstanceId,
    MeasurementKind, MeasurementRecord, SlidingHistory, StateMean,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HandlerConfig {
    pub strategy: Strategy,
    /// Age of the belief, factor and measurement histories, seconds.
    pub history_window: f64,
    /// Chi-square acceptance probability of the optional innovation gate.
    pub gate_probability: Option<f64>,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Dp, history_window: 5.0, gate_probability: None }
    }
}

impl HandlerConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self { strategy, ..Self::default() }
    }
}

/// Entry of the measurement history.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Propagate(ImuReading),
    Update(MeasurementRecord),
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Propagate(r) => r.t,
            Event::Update(m) => m.timestamp,
        }
    }
}

/// Stacked covariance over all stateful instances, in ascending id order.
#[derive(Clone, Debug)]
pub struct JointCovariance {
    pub ids: Vec<InstanceId>,
    pub offsets: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl JointCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn offset_of(&self, id: InstanceId) -> Option<usize> {
        self.ids.iter().position(|&i| i == id).map(|k| self.offsets[k])
    }
}

/// Owns the sensor instances and runs the fusion strategy.
#[derive(Clone, Debug)]
pub struct InstanceHandler {
    config: HandlerConfig,
    instances: BTreeMap<InstanceId, SensorInstance>,
    imu: Option<InstanceId>,
    biases: RangeBiasTable,
    events: SlidingHistory<Vec<Event>>,
    readings: SlidingHistory<ImuReading>,
    latest: f64,
    structure_changed_at: f64,
    diagnostics: Diagnostics,
}

impl InstanceHandler {
    pub fn new(config: HandlerConfig) -> Self {
        let capacity = HistoryCapacity::MaxAge(config.history_window);
        Self {
            config,
            instances: BTreeMap::new(),
            imu: None,
            biases: RangeBiasTable::new(),
            events: SlidingHistory::new(capacity),
            readings: SlidingHistory::new(capacity),
            latest: f64::NEG_INFINITY,
            structure_changed_at: f64::NEG_INFINITY,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn config(&self) -> &HandlerConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn biases(&self) -> &RangeBiasTable {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut RangeBiasTable {
        &mut self.biases
    }

    /// Timestamp of the newest processed event.
    pub fn latest_time(&self) -> f64 {
        self.latest
    }

    pub fn propagation_sensor(&self) -> Option<InstanceId> {
        self.imu
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.instances.contains_key(&id)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&SensorInstance> {
        self.instances.get(&id)
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn sensor_type(&self, id: InstanceId) -> Option<SensorType> {
        self.instances.get(&id).map(|i| i.sensor_type())
    }

    pub fn stateful_ids(&self) -> Vec<InstanceId> {
        self.instances.values().filter(|i| i.sensor_type().is_stateful()).map(|i| i.id).collect()
    }

    /// Current belief of a stateful instance.
    pub fn belief(&self, id: InstanceId) -> Option<&Belief> {
        self.instances.get(&id).and_then(|i| i.belief())
    }

    /// Belief valid at time `t`.
    pub fn belief_at(&self, id: InstanceId, t: f64) -> Result<&Belief, FilterError> {
        let inst = self.instances.get(&id).ok_or(FilterError::UnknownInstance(id))?;
        Ok(inst.beliefs.query(t)?.1)
    }

    pub fn beliefs(&self) -> BTreeMap<InstanceId, Belief> {
        self.instances.values().filter_map(|i| i.belief().map(|b| (i.id, b.clone()))).collect()
    }

    /// Stored factor `S_{owner,other}`.
    pub fn factor(&self, owner: InstanceId, other: InstanceId) -> Option<&DMatrix<f64>> {
        self.instances.get(&owner).and_then(|i| i.factors.current(other))
    }

    /// `Σ_ij` reconstructed from the stored factors.
    pub fn cross_covariance(&self, i: InstanceId, j: InstanceId) -> Option<DMatrix<f64>> {
        let s_ij = self.factor(i, j)?;
        let s_ji = self.factor(j, i)?;
        reconstruct_cross(s_ij, s_ji).ok()
    }

    pub fn joint_covariance(&self) -> JointCovariance {
        let ids = self.stateful_ids();
        let (offsets, matrix) = self.assemble(&ids);
        JointCovariance { ids, offsets, matrix }
    }

    pub fn last_reading(&self) -> Option<&ImuReading> {
        self.readings.latest().map(|(_, r)| r)
    }

    // ---------------------------------------------------------------------
    // registration
    // ---------------------------------------------------------------------

    /// Registers an instance; stateful types (IMU, anchor) need an initial
    /// belief. New instances start uncorrelated with every other instance.
    pub fn register_instance(
        &mut self,
        id: InstanceId,
        constants: InstanceConstants,
        initial_belief: Option<Belief>,
    ) -> Result<InstanceId, FilterError> {
        if !id.is_valid() {
            return Err(FilterError::InvalidId(id));
        }
        if self.instances.contains_key(&id) {
            return Err(FilterError::DuplicateInstance(id));
        }
        let sensor_type = constants.sensor_type();
        if sensor_type == SensorType::Imu {
            if let Some(existing) = self.imu {
                return Err(FilterError::SecondPropagationSensor(existing));
            }
        }
        let belief = match (sensor_type.is_stateful(), initial_belief) {
            (true, Some(mut b)) => {
                let type_ok = matches!(
                    (sensor_type, &b.mean),
                    (SensorType::Imu, StateMean::Imu(_)) | (SensorType::UwbAnchor, StateMean::Position(_))
                );
                if !type_ok {
                    return Err(FilterError::InvalidBelief(id, "state layout does not match sensor type".into()));
                }
                b.instance_id = id;
                // re-validate: fields are public
                Some(Belief::new(id, b.timestamp, b.mean, b.covariance)?)
            }
            (true, None) => return Err(FilterError::InvalidBelief(id, "stateful instance needs a belief".into())),
            (false, Some(_)) => {
                return Err(FilterError::InvalidBelief(id, "stateless instance cannot carry a belief".into()))
            }
            (false, None) => None,
        };
        if let InstanceConstants::Anchor { biases } = &constants {
            for (other, bias) in biases {
                self.biases.insert(id, *other, *bias)?;
            }
        }

        let t_reg = match &belief {
            Some(b) if self.latest.is_finite() => self.latest.max(b.timestamp),
            Some(b) => b.timestamp,
            None if self.latest.is_finite() => self.latest,
            None => 0.0,
        };
        let capacity = HistoryCapacity::MaxAge(self.config.history_window);
        let mut instance = SensorInstance {
            id,
            constants,
            beliefs: SlidingHistory::new(capacity),
            factors: FactorTable::new(id, capacity),
        };
        if let Some(b) = belief {
            let dim_new = b.error_dim();
            instance.beliefs.insert(t_reg, b);
            for other in self.instances.values_mut().filter(|o| o.sensor_type().is_stateful()) {
                let dim_other = other.error_dim();
                // lower id holds the cross block, higher id holds identity
                let (low, high, dim_low, dim_high) = if other.id < id {
                    (&mut other.factors, &mut instance.factors, dim_other, dim_new)
                } else {
                    (&mut instance.factors, &mut other.factors, dim_new, dim_other)
                };
                let (low_owner, high_owner) = (low.owner(), high.owner());
                low.set(high_owner, t_reg, DMatrix::zeros(dim_low, dim_high));
                high.set(low_owner, t_reg, DMatrix::identity(dim_high, dim_high));
            }
        }
        if sensor_type == SensorType::Imu {
            self.imu = Some(id);
        }
        self.instances.insert(id, instance);
        self.structure_changed_at = t_reg;
        self.latest = self.latest.max(t_reg);
        Ok(id)
    }

    /// Removes an instance together with every factor referencing it.
    pub fn remove_instance(&mut self, id: InstanceId) -> Result<(), FilterError> {
        if !self.instances.contains_key(&id) {
            return Err(FilterError::UnknownInstance(id));
        }
        if self.imu == Some(id) {
            return Err(FilterError::RemovePropagationSensor(id));
        }
        self.instances.remove(&id);
        for other in self.instances.values_mut() {
            other.factors.remove(id);
        }
        self.biases.remove_involving(id);
        if self.latest.is_finite() {
            self.structure_changed_at = self.latest;
        }
        Ok(())
    }

    // ---------------------------------------------------------------------
    // event ingestion
    // ---------------------------------------------------------------------

    /// Propagates the IMU instance with a new reading. Readings must arrive in
    /// time order.
    pub fn propagate(&mut self, reading: ImuReading) -> Result<UpdateOutcome, FilterError> {
        if !reading.is_finite() {
            return Err(crate::models::ModelError::NonFinite("imu reading").into());
        }
        if self.imu.is_none() {
            return Err(FilterError::NoPropagationSensor);
        }
        if let Some(last) = self.readings.latest_time() {
            if reading.t < last {
                return Err(FilterError::OutOfSequenceImu { t: reading.t, last });
            }
        }
        self.submit(Event::Propagate(reading))
    }

    /// Processes an update-type measurement, rewinding and replaying when it
    /// is older than the newest processed event.
    pub fn update(&mut self, record: MeasurementRecord) -> Result<UpdateOutcome, FilterError> {
        for id in record.referenced() {
            if !self.instances.contains_key(&id) {
                return Err(FilterError::UnknownInstance(id));
            }
        }
        self.submit(Event::Update(record))
    }

    fn submit(&mut self, event: Event) -> Result<UpdateOutcome, FilterError> {
        let t = event.time();
        if t < self.latest - self.config.history_window {
            self.diagnostics.dropped_stale += 1;
            log::debug!("dropping stale event at {t} (latest {})", self.latest);
            return Ok(UpdateOutcome::DroppedStale);
        }
        if t < self.latest {
            if t < self.structure_changed_at {
                self.diagnostics.dropped_structural += 1;
                return Ok(UpdateOutcome::DroppedStructural);
            }
            self.rewind(t);
            self.events.upsert_with(t, Vec::new, |v| v.push(event.clone()));
            let outcome = self.apply(&event)?;
            let later: Vec<Event> = self.events.iter_after(t).flat_map(|(_, evs)| evs.iter().cloned()).collect();
            for ev in &later {
                self.apply(ev)?;
            }
            self.diagnostics.replays += 1;
            return Ok(match outcome {
                UpdateOutcome::Applied => UpdateOutcome::Replayed { replayed: later.len() },
                other => other,
            });
        }
        self.events.upsert_with(t, Vec::new, |v| v.push(event.clone()));
        self.latest = t;
        self.apply(&event)
    }

    fn rewind(&mut self, t: f64) {
        for inst in self.instances.values_mut() {
            inst.beliefs.truncate_after(t);
            inst.factors.truncate_after(t);
        }
        self.readings.truncate_after(t);
    }

    fn apply(&mut self, event: &Event) -> Result<UpdateOutcome, FilterError> {
        match event {
            Event::Propagate(r) => {
                self.apply_propagation(r)?;
                Ok(UpdateOutcome::Applied)
            }
            Event::Update(m) => {
                let outcome = self.apply_update(m)?;
                match &outcome {
                    UpdateOutcome::Applied => self.diagnostics.applied += 1,
                    UpdateOutcome::Gated => self.diagnostics.gated += 1,
                    UpdateOutcome::Rejected(_) => self.diagnostics.rejected += 1,
                    UpdateOutcome::Ignored => self.diagnostics.ignored += 1,
                    UpdateOutcome::SingularInnovation => self.diagnostics.singular += 1,
                    _ => {}
                }
                Ok(outcome)
            }
        }
    }

    fn apply_propagation(&mut self, reading: &ImuReading) -> Result<(), FilterError> {
        let imu_id = self.imu.ok_or(FilterError::NoPropagationSensor)?;
        let t = reading.t;
        let inst = self.instances.get_mut(&imu_id).ok_or(FilterError::UnknownInstance(imu_id))?;
        let noise = match &inst.constants {
            InstanceConstants::Imu(n) => *n,
            _ => unreachable!("propagation sensor is an IMU"),
        };
        let belief = inst.belief().ok_or(FilterError::UnknownInstance(imu_id))?.clone();
        let dt_total = t - belief.timestamp;
        if dt_total > 0.0 {
            let steps = (dt_total / MAX_TIME_STEP).ceil().max(1.0) as usize;
            let dt = dt_total / steps as f64;
            let mut state = *belief.mean.as_imu().expect("imu layout");
            let mut cov = belief.covariance.clone();
            let mut phi_total = DMatrix::<f64>::identity(15, 15);
            for _ in 0..steps {
                let out = imu_propagate(&state, &cov, reading, dt, &noise)?;
                state = out.state;
                cov = out.covariance;
                let phi = DMatrix::from_iterator(15, 15, out.transition.iter().copied());
                phi_total = phi * phi_total;
            }
            let next = Belief { instance_id: imu_id, timestamp: t, mean: StateMean::Imu(state), covariance: cov };
            inst.beliefs.insert(t, next);
            let others: Vec<InstanceId> = inst.factors.others().collect();
            for other in others {
                let s = inst.factors.current(other).expect("listed factor");
                let updated = &phi_total * s;
                inst.factors.set(other, t, updated);
            }
        }
        self.readings.insert(t, *reading);
        Ok(())
    }

    fn current_state(&self, id: InstanceId) -> Result<&StateMean, FilterError> {
        self.belief(id).map(|b| &b.mean).ok_or(FilterError::UnknownInstance(id))
    }

    /// Builds the linearized observation, or `None` when the measurement is
    /// uninformative.
    fn linearize(&self, m: &MeasurementRecord) -> Result<Option<LinearizedObservation>, FilterError> {
        let variance = m.noise[(0, 0)];
        let sensor = self.instances.get(&m.sensor_id).ok_or(FilterError::UnknownInstance(m.sensor_id))?;
        let imu_id = self.imu.ok_or(FilterError::NoPropagationSensor);
        let obs = match &m.kind {
            MeasurementKind::Range { responder } => {
                let other = self.instances.get(responder).ok_or(FilterError::UnknownInstance(*responder))?;
                let bias = self.biases.get(m.sensor_id, *responder);
                match (&sensor.constants, &other.constants) {
                    (InstanceConstants::Tag { lever_arm }, InstanceConstants::Anchor { .. })
                    | (InstanceConstants::Anchor { .. }, InstanceConstants::Tag { lever_arm }) => {
                        let (anchor_id, imu_id) =
                            (if sensor.sensor_type() == SensorType::UwbAnchor { sensor.id } else { other.id }, imu_id?);
                        let state = self.current_state(imu_id)?.as_imu().expect("imu layout");
                        let anchor = self.current_state(anchor_id)?.as_position().expect("anchor layout");
                        range_observation_tag_anchor(imu_id, state, lever_arm, anchor_id, anchor, bias, m.z[0], variance)?
                    }
                    (InstanceConstants::Anchor { .. }, InstanceConstants::Anchor { .. }) => {
                        let pi = self.current_state(sensor.id)?.as_position().expect("anchor layout");
                        let pj = self.current_state(other.id)?.as_position().expect("anchor layout");
                        range_observation_anchor_anchor(sensor.id, pi, other.id, pj, bias, m.z[0], variance)?
                    }
                    (InstanceConstants::Tag { .. }, InstanceConstants::Tag { .. }) => return Ok(None),
                    _ => {
                        return Err(FilterError::UnsupportedMeasurement(format!(
                            "range between {} and {}",
                            sensor.id, other.id
                        )))
                    }
                }
            }
            MeasurementKind::Pressure => {
                let InstanceConstants::Barometer(params) = &sensor.constants else {
                    return Err(FilterError::UnsupportedMeasurement(format!("pressure from {}", sensor.id)));
                };
                let imu_id = imu_id?;
                let state = self.current_state(imu_id)?.as_imu().expect("imu layout");
                baro_height_observation(imu_id, state, params, m.z[0], variance)?
            }
            MeasurementKind::ZeroVelocity => {
                if Some(sensor.id) != self.imu {
                    return Err(FilterError::UnsupportedMeasurement(format!("zero velocity from {}", sensor.id)));
                }
                let Some(reading) = self.last_reading() else { return Ok(None) };
                let state = self.current_state(sensor.id)?.as_imu().expect("imu layout");
                zupt_observation(sensor.id, state, reading, m.noise.clone())?
            }
        };
        Ok(Some(obs))
    }

    fn apply_update(&mut self, m: &MeasurementRecord) -> Result<UpdateOutcome, FilterError> {
        let obs = match self.linearize(m) {
            Ok(Some(obs)) => obs,
            Ok(None) => return Ok(UpdateOutcome::Ignored),
            Err(FilterError::Model(e)) => return Ok(UpdateOutcome::Rejected(e)),
            Err(e) => return Err(e),
        };
        let t = m.timestamp;
        let mut involved = obs.involved();
        involved.sort();
        involved.dedup();
        let set = match self.config.strategy {
            Strategy::Dp => self.stateful_ids(),
            Strategy::Dah => involved,
        };
        let correction = match self.joint_update(&set, &obs, t) {
            Ok(Some(c)) => c,
            Ok(None) => return Ok(UpdateOutcome::Gated),
            Err(FilterError::SingularInnovation) => return Ok(UpdateOutcome::SingularInnovation),
            Err(e) => return Err(e),
        };
        if self.config.strategy == Strategy::Dah {
            self.correct_uninvolved(&set, &correction, t);
        }
        Ok(UpdateOutcome::Applied)
    }

    /// Error-state offsets of `ids` and their stacked covariance.
    fn assemble(&self, ids: &[InstanceId]) -> (Vec<usize>, DMatrix<f64>) {
        let dims: Vec<usize> = ids.iter().map(|id| self.instances[id].error_dim()).collect();
        let mut offsets = Vec::with_capacity(ids.len());
        let mut n = 0;
        for d in &dims {
            offsets.push(n);
            n += d;
        }
        let mut sigma = DMatrix::zeros(n, n);
        for (a, ida) in ids.iter().enumerate() {
            let inst_a = &self.instances[ida];
            let cov = &inst_a.belief().expect("stateful").covariance;
            sigma.view_mut((offsets[a], offsets[a]), (dims[a], dims[a])).copy_from(cov);
            for (b, idb) in ids.iter().enumerate().skip(a + 1) {
                let s_ab = inst_a.factors.current(*idb).expect("factor pair");
                let s_ba = self.instances[idb].factors.current(*ida).expect("factor pair");
                let cross = s_ab * s_ba.transpose();
                sigma.view_mut((offsets[a], offsets[b]), (dims[a], dims[b])).copy_from(&cross);
                sigma.view_mut((offsets[b], offsets[a]), (dims[b], dims[a])).copy_from(&cross.transpose());
            }
        }
        (offsets, sigma)
    }

    /// Exact EKF update over `ids`; returns `I - K·H` or `None` if gated.
    fn joint_update(
        &mut self,
        ids: &[InstanceId],
        obs: &LinearizedObservation,
        t: f64,
    ) -> Result<Option<DMatrix<f64>>, FilterError> {
        let (offsets, sigma) = self.assemble(ids);
        let n = sigma.nrows();
        let m = obs.dim();
        let mut h = DMatrix::zeros(m, n);
        for block in &obs.blocks {
            let k = ids
                .iter()
                .position(|&id| id == block.instance)
                .ok_or(FilterError::UnknownInstance(block.instance))?;
            h.view_mut((0, offsets[k]), (m, block.jacobian.ncols())).copy_from(&block.jacobian);
        }
        let pht = &sigma * h.transpose();
        let s = &h * &pht + &obs.noise;
        let chol = s.clone().cholesky().ok_or(FilterError::SingularInnovation)?;
        if let Some(p) = self.config.gate_probability {
            let d2 = obs.residual.dot(&chol.solve(&obs.residual));
            let bound = ChiSquared::new(m as f64).expect("positive dof").inverse_cdf(p);
            if d2 > bound {
                return Ok(None);
            }
        }
        let gain = chol.solve(&pht.transpose()).transpose();
        let delta = &gain * &obs.residual;
        let ikh = DMatrix::identity(n, n) - &gain * &h;
        let mut updated = &ikh * &sigma * ikh.transpose() + &gain * &obs.noise * gain.transpose();
        symmetrize(&mut updated);

        for (k, id) in ids.iter().enumerate() {
            let inst = self.instances.get_mut(id).expect("listed instance");
            let belief = inst.belief().expect("stateful");
            let dim = belief.error_dim();
            let d = DVector::from_iterator(dim, delta.rows(offsets[k], dim).iter().copied());
            // the IMU mean stays valid at its propagation time; the next
            // reading integrates from there
            let timestamp = if Some(*id) == self.imu { belief.timestamp } else { t };
            let next = Belief {
                instance_id: *id,
                timestamp,
                mean: boxplus(&belief.mean, &d)?,
                covariance: updated.view((offsets[k], offsets[k]), (dim, dim)).into_owned(),
            };
            inst.beliefs.insert(t, next);
        }
        for a in 0..ids.len() {
            for b in (a + 1)..ids.len() {
                let (low, high) = (ids[a], ids[b]);
                let dim_low = self.instances[&low].error_dim();
                let dim_high = self.instances[&high].error_dim();
                let block = updated.view((offsets[a], offsets[b]), (dim_low, dim_high)).into_owned();
                self.instances.get_mut(&low).expect("listed").factors.set(high, t, block);
                self.instances
                    .get_mut(&high)
                    .expect("listed")
                    .factors
                    .set(low, t, DMatrix::identity(dim_high, dim_high));
            }
        }
        Ok(Some(ikh))
    }

    /// Applies `I - K·H` to the cross-covariances between the involved set
    /// and every uninvolved instance. With `H` zero on the uninvolved states
    /// this block is exact; only the uninvolved marginals and means are left
    /// unchanged, which keeps the joint covariance positive semi-definite.
    fn correct_uninvolved(&mut self, ids: &[InstanceId], correction: &DMatrix<f64>, t: f64) {
        let dims: Vec<usize> = ids.iter().map(|id| self.instances[id].error_dim()).collect();
        let n: usize = dims.iter().sum();
        let uninvolved: Vec<InstanceId> = self.stateful_ids().into_iter().filter(|k| !ids.contains(k)).collect();
        for k in uninvolved {
            let dim_k = self.instances[&k].error_dim();
            let mut stacked = DMatrix::zeros(n, dim_k);
            let mut offset = 0;
            for (v, dim) in ids.iter().zip(&dims) {
                let s_vk = self.instances[v].factors.current(k).expect("factor pair");
                let s_kv = self.instances[&k].factors.current(*v).expect("factor pair");
                stacked.view_mut((offset, 0), (*dim, dim_k)).copy_from(&(s_vk * s_kv.transpose()));
                offset += dim;
            }
            let corrected = correction * stacked;
            let mut offset = 0;
            for (v, dim) in ids.iter().zip(&dims) {
                let block = corrected.view((offset, 0), (*dim, dim_k)).into_owned();
                offset += dim;
                let (low, high, cross, dim_high) =
                    if *v < k { (*v, k, block, dim_k) } else { (k, *v, block.transpose(), *dim) };
                self.instances.get_mut(&low).expect("listed").factors.set(high, t, cross);
                self.instances.get_mut(&high).expect("listed").factors.set(low, t, DMatrix::identity(dim_high, dim_high));
            }
        }
    }
}
