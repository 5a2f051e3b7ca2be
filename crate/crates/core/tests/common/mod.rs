//! Shared helpers for the integration tests: a monolithic stacked EKF used as
//! reference for the decoupled handler, random stream generation and finite
//! differences.
#![allow(dead_code)]

pub mod flyby;
pub mod jacobians;

use std::collections::BTreeMap;

use meshfuse_core::filter::{HandlerConfig, InstanceConstants, InstanceHandler, Strategy};
use meshfuse_core::models::imu::{propagate_mean, MAX_TIME_STEP};
use meshfuse_core::models::{
    baro_height_observation, imu_propagate, range_observation_anchor_anchor, range_observation_tag_anchor,
    zupt_observation, BaroParams, ImuNoise, ImuReading, ImuState, LinearizedObservation, RangeBias,
};
use meshfuse_core::state::{boxminus, boxplus, rotation, Belief, MeasurementKind, MeasurementRecord, StateMean};
use meshfuse_core::InstanceId;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const IMU: InstanceId = InstanceId(1);
pub const BARO: InstanceId = InstanceId(2);
pub const TAG_A: InstanceId = InstanceId(10);
pub const TAG_B: InstanceId = InstanceId(11);

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng)) * sigma
}

/// Random symmetric positive definite matrix with eigenvalues near `scale`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    (&a * a.transpose() / n as f64 + DMatrix::identity(n, n)) * scale
}

pub fn random_imu_state(rng: &mut ChaCha8Rng) -> ImuState {
    ImuState {
        position: Vector3::new(rng.random_range(1.0..4.0), rng.random_range(1.0..7.0), rng.random_range(0.5..3.0)),
        velocity: normal3(rng, 0.5),
        orientation: rotation::exp(&normal3(rng, 0.4)),
        gyro_bias: normal3(rng, 0.01),
        accel_bias: normal3(rng, 0.05),
    }
}

/// Stacked error-state EKF over the IMU and every anchor, maintaining the full
/// joint covariance explicitly.
#[derive(Clone, Debug)]
pub struct MonolithicEkf {
    pub imu: ImuState,
    pub anchors: BTreeMap<InstanceId, Vector3<f64>>,
    pub covariance: DMatrix<f64>,
    pub noise: ImuNoise,
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    pub baro: BaroParams,
    pub biases: BTreeMap<(InstanceId, InstanceId), RangeBias>,
    pub t: f64,
    pub last_reading: Option<ImuReading>,
    /// Zero the gain rows of states the measurement does not involve, which
    /// is the reference for the approximated strategy.
    pub involved_only: bool,
}

impl MonolithicEkf {
    fn anchor_offset(&self, id: InstanceId) -> usize {
        15 + 3 * self.anchors.keys().position(|&a| a == id).expect("known anchor")
    }

    fn offset(&self, id: InstanceId) -> usize {
        if id == IMU {
            0
        } else {
            self.anchor_offset(id)
        }
    }

    pub fn bias(&self, a: InstanceId, b: InstanceId) -> RangeBias {
        let key = if a < b { (a, b) } else { (b, a) };
        self.biases.get(&key).copied().unwrap_or_default()
    }

    pub fn propagate(&mut self, reading: &ImuReading) {
        let dt_total = reading.t - self.t;
        if dt_total > 0.0 {
            let steps = (dt_total / MAX_TIME_STEP).ceil().max(1.0) as usize;
            let dt = dt_total / steps as f64;
            let n = self.covariance.nrows();
            for _ in 0..steps {
                let imu_cov = self.covariance.view((0, 0), (15, 15)).into_owned();
                let out = imu_propagate(&self.imu, &imu_cov, reading, dt, &self.noise).unwrap();
                let phi = DMatrix::from_iterator(15, 15, out.transition.iter().copied());
                let mut f = DMatrix::identity(n, n);
                f.view_mut((0, 0), (15, 15)).copy_from(&phi);
                let mut next = &f * &self.covariance * f.transpose();
                next.view_mut((0, 0), (15, 15)).copy_from(&out.covariance);
                self.covariance = next;
                self.imu = out.state;
            }
            self.t = reading.t;
        }
        self.last_reading = Some(*reading);
    }

    pub fn linearize(&self, m: &MeasurementRecord) -> Option<LinearizedObservation> {
        let var = m.noise[(0, 0)];
        match &m.kind {
            MeasurementKind::Range { responder } => {
                let (a, b) = (m.sensor_id, *responder);
                let bias = self.bias(a, b);
                match (self.tags.get(&a), self.tags.get(&b)) {
                    (Some(_), Some(_)) => None,
                    (Some(lever), None) | (None, Some(lever)) => {
                        let anchor = if self.tags.contains_key(&a) { b } else { a };
                        range_observation_tag_anchor(IMU, &self.imu, lever, anchor, &self.anchors[&anchor], bias, m.z[0], var)
                            .ok()
                    }
                    (None, None) => {
                        range_observation_anchor_anchor(a, &self.anchors[&a], b, &self.anchors[&b], bias, m.z[0], var).ok()
                    }
                }
            }
            MeasurementKind::Pressure => baro_height_observation(IMU, &self.imu, &self.baro, m.z[0], var).ok(),
            MeasurementKind::ZeroVelocity => {
                zupt_observation(IMU, &self.imu, self.last_reading.as_ref()?, m.noise.clone()).ok()
            }
        }
    }

    pub fn update(&mut self, m: &MeasurementRecord) {
        let Some(obs) = self.linearize(m) else { return };
        let n = self.covariance.nrows();
        let mut h = DMatrix::zeros(obs.dim(), n);
        for b in &obs.blocks {
            let o = self.offset(b.instance);
            h.view_mut((0, o), (obs.dim(), b.jacobian.ncols())).copy_from(&b.jacobian);
        }
        let p = &self.covariance;
        let s = &h * p * h.transpose() + &obs.noise;
        let s_inv = s.try_inverse().unwrap();
        let mut k = p * h.transpose() * s_inv;
        if self.involved_only {
            let ids: Vec<InstanceId> = std::iter::once(IMU).chain(self.anchors.keys().copied()).collect();
            for id in ids.into_iter().filter(|id| obs.block(*id).is_none()) {
                let (o, d) = (self.offset(id), if id == IMU { 15 } else { 3 });
                k.rows_mut(o, d).fill(0.0);
            }
        }
        let dx = &k * &obs.residual;
        let ikh = DMatrix::identity(n, n) - &k * &h;
        let next = &ikh * p * ikh.transpose() + &k * &obs.noise * k.transpose();
        self.covariance = (&next + next.transpose()) * 0.5;
        let d_imu = DVector::from_iterator(15, dx.rows(0, 15).iter().copied());
        self.imu = match boxplus(&StateMean::Imu(self.imu), &d_imu).unwrap() {
            StateMean::Imu(s) => s,
            _ => unreachable!(),
        };
        let ids: Vec<InstanceId> = self.anchors.keys().copied().collect();
        for id in ids {
            let o = self.anchor_offset(id);
            let d = Vector3::new(dx[o], dx[o + 1], dx[o + 2]);
            *self.anchors.get_mut(&id).unwrap() += d;
        }
    }

    pub fn means(&self) -> BTreeMap<InstanceId, StateMean> {
        let mut out: BTreeMap<InstanceId, StateMean> =
            self.anchors.iter().map(|(id, p)| (*id, StateMean::Position(*p))).collect();
        out.insert(IMU, StateMean::Imu(self.imu));
        out
    }
}

/// Randomly initialised problem: a handler and the equivalent monolithic filter.
pub struct Scenario {
    pub imu_belief: Belief,
    pub anchor_beliefs: Vec<Belief>,
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    pub baro: BaroParams,
    pub noise: ImuNoise,
    pub biases: Vec<(InstanceId, InstanceId, RangeBias)>,
    /// Position of each anchor used to synthesize range values.
    pub anchor_truth: BTreeMap<InstanceId, Vector3<f64>>,
}

impl Scenario {
    pub fn random(rng: &mut ChaCha8Rng, anchors: usize) -> Self {
        let imu_state = random_imu_state(rng);
        let imu_belief = Belief::new(IMU, 0.0, StateMean::Imu(imu_state), random_spd(rng, 15, 1e-2)).unwrap();
        let mut anchor_beliefs = Vec::new();
        let mut anchor_truth = BTreeMap::new();
        for k in 0..anchors {
            let id = InstanceId(100 + k as u32);
            let truth = Vector3::new(rng.random_range(-2.0..7.0), rng.random_range(-2.0..10.0), rng.random_range(0.0..4.0));
            let est = truth + normal3(rng, 0.2);
            anchor_beliefs.push(Belief::new(id, 0.0, StateMean::Position(est), random_spd(rng, 3, 0.05)).unwrap());
            anchor_truth.insert(id, truth);
        }
        let tags = [(TAG_A, Vector3::new(0.2, 0.0, 0.05)), (TAG_B, Vector3::new(-0.2, 0.1, 0.0))].into_iter().collect();
        let baro = BaroParams { lever_arm: Vector3::new(0.0, 0.05, 0.1), ..BaroParams::default() };
        let mut biases = Vec::new();
        if anchors > 0 {
            biases.push((TAG_A, anchor_beliefs[0].instance_id, RangeBias::new(0.1, 1.01).unwrap()));
        }
        Self {
            imu_belief,
            anchor_beliefs,
            tags,
            baro,
            noise: ImuNoise::default(),
            biases,
            anchor_truth,
        }
    }

    pub fn anchor_ids(&self) -> Vec<InstanceId> {
        self.anchor_beliefs.iter().map(|b| b.instance_id).collect()
    }

    pub fn handler(&self, mut handler: InstanceHandler) -> InstanceHandler {
        handler.register_instance(IMU, InstanceConstants::Imu(self.noise), Some(self.imu_belief.clone())).unwrap();
        handler.register_instance(BARO, InstanceConstants::Barometer(self.baro), None).unwrap();
        for (id, lever) in &self.tags {
            handler.register_instance(*id, InstanceConstants::Tag { lever_arm: *lever }, None).unwrap();
        }
        for b in &self.anchor_beliefs {
            let biases = self
                .biases
                .iter()
                .filter(|(_, a, _)| *a == b.instance_id)
                .map(|(t, _, bias)| (*t, *bias))
                .collect();
            handler.register_instance(b.instance_id, InstanceConstants::Anchor { biases }, Some(b.clone())).unwrap();
        }
        handler
    }

    pub fn monolithic(&self) -> MonolithicEkf {
        let n = 15 + 3 * self.anchor_beliefs.len();
        let mut covariance = DMatrix::zeros(n, n);
        covariance.view_mut((0, 0), (15, 15)).copy_from(&self.imu_belief.covariance);
        let mut anchors = BTreeMap::new();
        for (k, b) in self.anchor_beliefs.iter().enumerate() {
            covariance.view_mut((15 + 3 * k, 15 + 3 * k), (3, 3)).copy_from(&b.covariance);
            anchors.insert(b.instance_id, *b.mean.as_position().unwrap());
        }
        let biases = self.biases.iter().map(|(a, b, bias)| ((*a.min(b), *a.max(b)), *bias)).collect();
        MonolithicEkf {
            imu: *self.imu_belief.mean.as_imu().unwrap(),
            anchors,
            covariance,
            noise: self.noise,
            tags: self.tags.clone(),
            baro: self.baro,
            biases,
            t: self.imu_belief.timestamp,
            last_reading: None,
            involved_only: false,
        }
    }

    /// Random event stream with `measurements` update events interleaved with
    /// IMU readings every 10 ms. Ranges are synthesized against a dead-reckoned
    /// body path and the true anchor positions.
    pub fn stream(&self, rng: &mut ChaCha8Rng, measurements: usize) -> Vec<StreamEvent> {
        let mut body = *self.imu_belief.mean.as_imu().unwrap();
        let anchors = self.anchor_ids();
        let mut out = Vec::new();
        let mut t = 0.0;
        let mut emitted = 0;
        while emitted < measurements {
            t += 0.01;
            let reading = ImuReading::new(
                t,
                body.accel_bias - body.rotation().transpose() * meshfuse_core::models::GRAVITY + normal3(rng, 0.3),
                body.gyro_bias + normal3(rng, 0.2),
            );
            body = propagate_mean(&body, &reading, 0.01);
            out.push(StreamEvent::Imu(reading));
            let k = rng.random_range(0..3);
            let mut times: Vec<f64> = (0..k).map(|_| t + rng.random_range(0.0..0.01)).collect();
            times.sort_by(f64::total_cmp);
            for tm in times {
                if emitted >= measurements {
                    break;
                }
                let roll: f64 = rng.random();
                let record = if roll < 0.6 && !anchors.is_empty() {
                    let anchor = anchors[rng.random_range(0..anchors.len())];
                    let (tag, lever) = if rng.random_bool(0.5) { (TAG_A, self.tags[&TAG_A]) } else { (TAG_B, self.tags[&TAG_B]) };
                    let d = (self.anchor_truth[&anchor] - (body.position + body.orientation * lever)).norm();
                    let (i, r) = if rng.random_bool(0.5) { (tag, anchor) } else { (anchor, tag) };
                    MeasurementRecord::range(tm, i, r, d + 0.05 * normal(rng), 0.05).unwrap()
                } else if roll < 0.75 && anchors.len() >= 2 {
                    let i = rng.random_range(0..anchors.len());
                    let j = (i + 1 + rng.random_range(0..anchors.len() - 1)) % anchors.len();
                    let d = (self.anchor_truth[&anchors[i]] - self.anchor_truth[&anchors[j]]).norm();
                    MeasurementRecord::range(tm, anchors[i], anchors[j], d + 0.05 * normal(rng), 0.05).unwrap()
                } else if roll < 0.92 {
                    let height = (body.position + body.orientation * self.baro.lever_arm).z + 0.05 * normal(rng);
                    MeasurementRecord::pressure(tm, BARO, self.baro.pressure(height), 1.0).unwrap()
                } else {
                    MeasurementRecord::zero_velocity(tm, IMU, 0.5, 0.05).unwrap()
                };
                out.push(StreamEvent::Update(record));
                emitted += 1;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum StreamEvent {
    Imu(ImuReading),
    Update(MeasurementRecord),
}

impl StreamEvent {
    pub fn time(&self) -> f64 {
        match self {
            StreamEvent::Imu(r) => r.t,
            StreamEvent::Update(m) => m.timestamp,
        }
    }
}

pub fn feed_handler(handler: &mut InstanceHandler, events: &[StreamEvent]) {
    for ev in events {
        match ev {
            StreamEvent::Imu(r) => {
                handler.propagate(*r).unwrap();
            }
            StreamEvent::Update(m) => {
                handler.update(m.clone()).unwrap();
            }
        }
    }
}

pub fn feed_monolithic(ekf: &mut MonolithicEkf, events: &[StreamEvent]) {
    for ev in events {
        match ev {
            StreamEvent::Imu(r) => ekf.propagate(r),
            StreamEvent::Update(m) => ekf.update(m),
        }
    }
}

/// Largest relative deviation between the handler's joint belief and a
/// reference mean/covariance: `‖Δx‖/max(‖x‖,1)` and `‖ΔΣ‖_F/‖Σ‖_F`.
pub fn relative_deviation(
    handler: &InstanceHandler,
    means: &BTreeMap<InstanceId, StateMean>,
    covariance: &DMatrix<f64>,
) -> (f64, f64) {
    let joint = handler.joint_covariance();
    let mut mean_err: f64 = 0.0;
    for id in &joint.ids {
        let got = &handler.belief(*id).unwrap().mean;
        let want = &means[id];
        let d = boxminus(got, want).unwrap().norm();
        let scale = match want {
            StateMean::Imu(s) => s.position.norm().max(s.velocity.norm()).max(1.0),
            StateMean::Position(p) => p.norm().max(1.0),
        };
        mean_err = mean_err.max(d / scale);
    }
    let cov_err = (&joint.matrix - covariance).norm() / covariance.norm();
    (mean_err, cov_err)
}

/// Central finite-difference Jacobian of `f` at zero perturbation.
pub fn central_difference(dim_in: usize, step: f64, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let f0 = f(&DVector::zeros(dim_in));
    let mut jac = DMatrix::zeros(f0.len(), dim_in);
    for k in 0..dim_in {
        let mut e = DVector::zeros(dim_in);
        e[k] = step;
        let plus = f(&e);
        e[k] = -step;
        let minus = f(&e);
        jac.set_column(k, &((plus - minus) / (2.0 * step)));
    }
    jac
}

/// `‖A − B‖_F / max(‖B‖_F, floor)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

/// Largest relative deviation of DP from the monolithic EKF on a random
/// stream.
pub fn dp_deviation(seed: u64, anchors: usize, measurements: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = Scenario::random(&mut rng, anchors);
    let events = scenario.stream(&mut rng, measurements);
    let mut handler = scenario.handler(InstanceHandler::new(HandlerConfig::with_strategy(Strategy::Dp)));
    let mut ekf = scenario.monolithic();
    feed_handler(&mut handler, &events);
    feed_monolithic(&mut ekf, &events);
    relative_deviation(&handler, &ekf.means(), &ekf.covariance)
}

/// Delays every update by a random latency below `max_delay` while IMU
/// readings keep their order.
pub fn delayed_arrival(events: &[StreamEvent], max_delay: f64, rng: &mut ChaCha8Rng) -> Vec<StreamEvent> {
    let mut keyed: Vec<(f64, usize, StreamEvent)> = events
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let arrival = match e {
                StreamEvent::Imu(r) => r.t,
                StreamEvent::Update(m) => m.timestamp + rng.random_range(0.0..max_delay),
            };
            (arrival, k, e.clone())
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, e)| e).collect()
}

/// Largest relative deviation between in-order processing and processing
/// with every update delayed by up to `max_delay`.
pub fn oos_deviation(seed: u64, strategy: Strategy, anchors: usize, measurements: usize, max_delay: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = Scenario::random(&mut rng, anchors);
    let events = scenario.stream(&mut rng, measurements);
    let shuffled = delayed_arrival(&events, max_delay, &mut rng);
    let mut in_order = scenario.handler(InstanceHandler::new(HandlerConfig::with_strategy(strategy)));
    let mut late = scenario.handler(InstanceHandler::new(HandlerConfig::with_strategy(strategy)));
    feed_handler(&mut in_order, &events);
    feed_handler(&mut late, &shuffled);
    assert_eq!(late.diagnostics().dropped_stale, 0);
    let means = in_order.beliefs().into_iter().map(|(id, b)| (id, b.mean)).collect();
    relative_deviation(&late, &means, &in_order.joint_covariance().matrix)
}
