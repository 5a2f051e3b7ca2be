//! Closed-loop scenario: fusion with known anchors, fly-by calibration of
//! unknown anchors at trigger times, registration and continued fusion.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::dataset::{Dataset, BARO_ID, IMU_ID};
use super::metrics::{compute_nees, orientation_error_deg, rmse};
use super::SimError;
use crate::calib::{
    calibrate, CalibrationOptions, CalibrationProblem, CalibrationResult, CalibrationSample, RansacOptions,
};
use crate::filter::{Diagnostics, HandlerConfig, InstanceConstants, InstanceHandler, Strategy, UpdateOutcome};
use crate::models::imu::{ACCEL_BIAS, GYRO_BIAS, POS, ROT, VEL};
use crate::models::{tag_position, BaroParams, ImuNoise, ImuState, RangeBias, RangeBiasTable};
use crate::state::{Belief, InstanceId, MeasurementRecord, Pose, PoseSource, StateMean};

/// 1σ of the initial IMU belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuPrior {
    pub position: f64,
    pub velocity: f64,
    /// rad
    pub attitude: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for ImuPrior {
    fn default() -> Self {
        Self { position: 0.05, velocity: 0.05, attitude: 2f64.to_radians(), gyro_bias: 2e-3, accel_bias: 2e-2 }
    }
}

impl ImuPrior {
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(15, 15);
        for (offset, sigma) in [
            (POS, self.position),
            (VEL, self.velocity),
            (ROT, self.attitude),
            (GYRO_BIAS, self.gyro_bias),
            (ACCEL_BIAS, self.accel_bias),
        ] {
            for k in 0..3 {
                c[(offset + k, offset + k)] = sigma * sigma;
            }
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub strategy: Strategy,
    pub history_window: f64,
    pub gate_probability: Option<f64>,
    pub imu_noise: ImuNoise,
    pub imu_prior: ImuPrior,
    /// Barometer lever arm and pressure noise; the reference pressure is
    /// estimated from the initial rest phase.
    pub baro: Option<BaroParams>,
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    /// Anchors known from the start, with the positions handed to the filter.
    pub known_anchors: BTreeMap<InstanceId, Vector3<f64>>,
    pub known_anchor_sigma: f64,
    /// Pairwise biases known a priori.
    pub biases: RangeBiasTable,
    pub sigma_range: f64,
    /// Calibration triggers: time and the anchors calibrated then.
    pub triggers: Vec<(f64, Vec<InstanceId>)>,
    pub calibration: CalibrationOptions,
    /// 1σ of the tag positions fed to calibration, m.
    pub calibration_sigma_position: f64,
    /// Use true instead of estimated tag positions for calibration.
    pub calibrate_with_truth: bool,
    /// Added to the calibrated position covariance at registration, m (1σ).
    pub registration_sigma: f64,
    /// Duration of the initial rest phase, s.
    pub rest_duration: f64,
    /// Intervals with zero-velocity pseudo-measurements.
    pub zupt_windows: Vec<(f64, f64)>,
    /// Accelerometer and gyro 1σ of the zero-velocity residual on top of the
    /// white sample noise implied by `imu_noise` at the dataset's IMU rate.
    pub zupt_sigma: (f64, f64),
    /// Every n-th IMU reading inside a window carries a zero-velocity update.
    pub zupt_decimation: usize,
    /// Every n-th IMU reading is scored against truth.
    pub metrics_decimation: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dah,
            history_window: 5.0,
            gate_probability: Some(0.999),
            imu_noise: ImuNoise::default(),
            imu_prior: ImuPrior::default(),
            baro: Some(BaroParams { lever_arm: Vector3::new(0.0, 0.0, 0.1), ..BaroParams::default() }),
            tags: super::dataset::default_tag_lever_arms(),
            known_anchors: BTreeMap::new(),
            known_anchor_sigma: 0.01,
            biases: RangeBiasTable::new(),
            sigma_range: 0.1,
            triggers: Vec::new(),
            calibration: CalibrationOptions::default(),
            calibration_sigma_position: 0.1,
            calibrate_with_truth: false,
            registration_sigma: 0.1,
            rest_duration: 3.0,
            zupt_windows: Vec::new(),
            zupt_sigma: (0.05, 0.005),
            zupt_decimation: 10,
            metrics_decimation: 20,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Default evaluation setup over the default dataset layout: known anchors
    /// 101 to 104, fly-by calibration of 106 and 107 at 80 s and of 108 to 110
    /// at 100 s, zero-velocity updates during both rest phases.
    pub fn evaluation(strategy: Strategy, ransac: bool, seed: u64) -> Self {
        let anchors = super::dataset::default_anchor_positions();
        let known_anchors = super::dataset::KNOWN_ANCHOR_IDS.iter().map(|id| (*id, anchors[id])).collect();
        Self {
            strategy,
            known_anchors,
            triggers: vec![
                (80.0, vec![InstanceId(106), InstanceId(107)]),
                (100.0, vec![InstanceId(108), InstanceId(109), InstanceId(110)]),
            ],
            calibration: CalibrationOptions {
                ransac: ransac.then(|| RansacOptions::new(0.1, 0.1, 0.1)),
                ..CalibrationOptions::default()
            },
            zupt_windows: vec![(0.0, 3.0), (137.0, 140.0)],
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Range,
    Pressure,
    ZeroVelocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingSample {
    pub t: f64,
    pub kind: UpdateKind,
    /// Wall-clock duration of the update call, s.
    pub seconds: f64,
    /// Stateful instances registered at the time of the update.
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnchorReport {
    pub anchor_id: InstanceId,
    pub registered_at: f64,
    /// Error right after calibration, m.
    pub initial_error: f64,
    pub initial_nees: Option<f64>,
    /// Error of the final filter estimate, m.
    pub final_error: f64,
    pub final_nees: Option<f64>,
    pub inlier_count: usize,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnchorFailure {
    pub anchor_id: InstanceId,
    pub reason: String,
}

/// Calibration of one anchor with the samples it was computed from.
#[derive(Clone, Debug)]
pub struct AnchorCalibration {
    pub samples: Vec<CalibrationSample>,
    pub result: CalibrationResult,
}

#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub strategy: Strategy,
    pub position_rmse: f64,
    pub orientation_rmse_deg: f64,
    pub anchors: Vec<AnchorReport>,
    pub failed: Vec<AnchorFailure>,
    /// IMU position NEES at the scoring instants.
    pub nees: Vec<(f64, f64)>,
    pub timing: Vec<TimingSample>,
    /// Estimated IMU poses at the scoring instants.
    pub trajectory: Vec<(f64, Pose)>,
    pub calibrations: Vec<AnchorCalibration>,
    pub diagnostics: Diagnostics,
}

impl ErrorReport {
    pub fn mean_initial_anchor_error(&self) -> Option<f64> {
        mean(self.anchors.iter().map(|a| a.initial_error))
    }

    pub fn mean_final_anchor_error(&self) -> Option<f64> {
        mean(self.anchors.iter().map(|a| a.final_error))
    }

    /// Mean update duration over `[from, to)` and the number of updates.
    pub fn mean_update_time(&self, from: f64, to: f64) -> Option<(f64, usize)> {
        let v: Vec<f64> = self.timing.iter().filter(|s| s.t >= from && s.t < to).map(|s| s.seconds).collect();
        mean(v.iter().copied()).map(|m| (m, v.len()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

enum Input {
    Imu(usize),
    Baro(usize),
    Range(usize),
    Trigger(usize),
}

impl Input {
    /// Rank among inputs sharing a timestamp.
    fn rank(&self) -> u8 {
        match self {
            Input::Imu(_) => 0,
            Input::Baro(_) | Input::Range(_) => 1,
            Input::Trigger(_) => 2,
        }
    }
}

/// Pressure at zero height given a rest pressure observed at `rest_height`.
fn reference_pressure(rest_pressure: f64, rest_height: f64, params: &BaroParams) -> f64 {
    let unit = BaroParams { reference_pressure: 1.0, ..*params };
    rest_pressure / unit.pressure(rest_height)
}

/// Runs the scenario over a dataset. `anchor_truth` is used only for scoring.
pub fn run_scenario(
    config: &ScenarioConfig,
    dataset: &Dataset,
    anchor_truth: &BTreeMap<InstanceId, Vector3<f64>>,
) -> Result<ErrorReport, SimError> {
    let truth = &dataset.truth;
    let t0 = truth.start();
    let start_pose = truth.interpolate(t0).ok_or(SimError::EmptyTruth)?;

    let mut handler = InstanceHandler::new(HandlerConfig {
        strategy: config.strategy,
        history_window: config.history_window,
        gate_probability: config.gate_probability,
    });
    *handler.biases_mut() = config.biases.clone();

    let imu_state = ImuState { orientation: start_pose.orientation, ..ImuState::at_rest(start_pose.position) };
    let imu_belief = Belief::new(IMU_ID, t0, StateMean::Imu(imu_state), config.imu_prior.covariance())?;
    handler.register_instance(IMU_ID, InstanceConstants::Imu(config.imu_noise), Some(imu_belief))?;
    for (&id, lever) in &config.tags {
        handler.register_instance(id, InstanceConstants::Tag { lever_arm: *lever }, None)?;
    }
    for (&id, p) in &config.known_anchors {
        let cov = DMatrix::identity(3, 3) * config.known_anchor_sigma.powi(2);
        let belief = Belief::new(id, t0, StateMean::Position(*p), cov)?;
        handler.register_instance(id, InstanceConstants::Anchor { biases: Vec::new() }, Some(belief))?;
    }

    let mut baro = None;
    if let Some(params) = config.baro {
        let rest: Vec<f64> =
            dataset.baro.iter().filter(|(t, _)| *t <= t0 + config.rest_duration).map(|(_, p)| *p).collect();
        if let Some(avg) = mean(rest.iter().copied()) {
            let rest_height = start_pose.transform_point(&params.lever_arm).z;
            let calibrated = BaroParams { reference_pressure: reference_pressure(avg, rest_height, &params), ..params };
            handler.register_instance(BARO_ID, InstanceConstants::Barometer(calibrated), None)?;
            baro = Some(calibrated);
        }
    }

    let mut inputs: Vec<(f64, Input)> = Vec::with_capacity(dataset.imu.len() + dataset.ranges.len());
    inputs.extend(dataset.imu.iter().enumerate().map(|(k, r)| (r.t, Input::Imu(k))));
    if baro.is_some() {
        inputs.extend(
            dataset
                .baro
                .iter()
                .enumerate()
                .filter(|(_, (t, _))| *t > t0 + config.rest_duration)
                .map(|(k, (t, _))| (*t, Input::Baro(k))),
        );
    }
    inputs.extend(dataset.ranges.iter().enumerate().map(|(k, r)| (r.t, Input::Range(k))));
    inputs.extend(config.triggers.iter().enumerate().map(|(k, (t, _))| (*t, Input::Trigger(k))));
    inputs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())));

    let pending: Vec<InstanceId> = config.triggers.iter().flat_map(|(_, ids)| ids.iter().copied()).collect();
    let mut samples: BTreeMap<InstanceId, Vec<CalibrationSample>> = pending.iter().map(|&id| (id, Vec::new())).collect();
    let mut anchors: Vec<AnchorReport> = Vec::new();
    let mut registration_cov: BTreeMap<InstanceId, Matrix3<f64>> = BTreeMap::new();
    let mut failed = Vec::new();
    let mut timing = Vec::new();
    let mut trajectory = Vec::new();
    let mut calibrations = Vec::new();
    let mut nees = Vec::new();
    let mut position_errors = Vec::new();
    let mut orientation_errors = Vec::new();

    let range_variance_sigma = config.sigma_range;
    let (zupt_accel, zupt_gyro) = zupt_noise(config, &dataset.imu);
    for (t, input) in inputs {
        match input {
            Input::Imu(k) => {
                let reading = dataset.imu[k];
                handler.propagate(reading)?;
                let in_zupt = config.zupt_windows.iter().any(|(a, b)| t >= *a && t <= *b);
                if in_zupt && k % config.zupt_decimation.max(1) == 0 {
                    let m = MeasurementRecord::zero_velocity(t, IMU_ID, zupt_accel, zupt_gyro)?;
                    timed_update(&mut handler, m, UpdateKind::ZeroVelocity, &mut timing)?;
                }
                if k % config.metrics_decimation.max(1) == 0 {
                    score(&handler, truth, t, &mut trajectory, &mut nees, &mut position_errors, &mut orientation_errors);
                }
            }
            Input::Baro(k) => {
                let params = baro.expect("baro registered");
                let m = MeasurementRecord::pressure(t, BARO_ID, dataset.baro[k].1, params.sigma_pressure)?;
                timed_update(&mut handler, m, UpdateKind::Pressure, &mut timing)?;
            }
            Input::Range(k) => {
                let r = dataset.ranges[k];
                for (unknown, other) in [(r.initiator, r.responder), (r.responder, r.initiator)] {
                    if let Some(list) = samples.get_mut(&unknown) {
                        if let Some(s) = reference_sample(config, &handler, truth, other, r.t, r.range) {
                            list.push(s);
                        }
                    }
                }
                if handler.contains(r.initiator) && handler.contains(r.responder) {
                    let m = MeasurementRecord::range(t, r.initiator, r.responder, r.range, range_variance_sigma)?;
                    timed_update(&mut handler, m, UpdateKind::Range, &mut timing)?;
                }
            }
            Input::Trigger(k) => {
                for &anchor in &config.triggers[k].1 {
                    let collected = samples.remove(&anchor).unwrap_or_default();
                    let sample_count = collected.len();
                    let problem = CalibrationProblem::new(anchor, collected, 2);
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (u64::from(anchor.0) << 32));
                    let result = match calibrate(&problem, &config.calibration, &mut rng) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("calibration of anchor {anchor} failed: {e}");
                            failed.push(AnchorFailure { anchor_id: anchor, reason: e.to_string() });
                            continue;
                        }
                    };
                    let mut cov = result.position_covariance();
                    cov += Matrix3::identity() * config.registration_sigma.powi(2);
                    let cov_dyn = DMatrix::from_iterator(3, 3, cov.iter().copied());
                    let biases: Vec<(InstanceId, RangeBias)> = result
                        .biases
                        .iter()
                        .filter_map(|b| RangeBias::new(b.gamma, b.beta).ok().map(|bias| (b.reference_id, bias)))
                        .collect();
                    let belief = Belief::new(anchor, t, StateMean::Position(result.position), cov_dyn)?;
                    handler.register_instance(anchor, InstanceConstants::Anchor { biases }, Some(belief))?;
                    registration_cov.insert(anchor, cov);
                    let (initial_error, initial_nees) = match anchor_truth.get(&anchor) {
                        Some(p) => {
                            let e = result.position - p;
                            (e.norm(), position_nees(&e, &cov))
                        }
                        None => (f64::NAN, None),
                    };
                    anchors.push(AnchorReport {
                        anchor_id: anchor,
                        registered_at: t,
                        initial_error,
                        initial_nees,
                        final_error: f64::NAN,
                        final_nees: None,
                        inlier_count: result.inlier_count(),
                        sample_count,
                    });
                    calibrations.push(AnchorCalibration { samples: problem.samples().to_vec(), result });
                }
            }
        }
    }

    for report in &mut anchors {
        let (Some(belief), Some(p)) = (handler.belief(report.anchor_id), anchor_truth.get(&report.anchor_id)) else {
            continue;
        };
        let est = belief.mean.as_position().expect("anchor layout");
        let e = est - p;
        report.final_error = e.norm();
        report.final_nees = position_nees(&e, &belief.covariance.fixed_view::<3, 3>(0, 0).into_owned());
    }

    let orientation_rmse_deg = super::metrics::rms(&orientation_errors);
    Ok(ErrorReport {
        strategy: config.strategy,
        position_rmse: rmse(&position_errors),
        orientation_rmse_deg,
        anchors,
        failed,
        nees,
        timing,
        trajectory,
        calibrations,
        diagnostics: handler.diagnostics(),
    })
}

fn position_nees(error: &Vector3<f64>, cov: &Matrix3<f64>) -> Option<f64> {
    let e = DVector::from_column_slice(error.as_slice());
    let c = DMatrix::from_column_slice(3, 3, cov.as_slice());
    compute_nees(&e, &c).ok()
}

fn timed_update(
    handler: &mut InstanceHandler,
    m: MeasurementRecord,
    kind: UpdateKind,
    timing: &mut Vec<TimingSample>,
) -> Result<UpdateOutcome, SimError> {
    let t = m.timestamp;
    let instances = handler.stateful_ids().len();
    let start = Instant::now();
    let outcome = handler.update(m)?;
    let seconds = start.elapsed().as_secs_f64();
    if outcome.is_applied() {
        timing.push(TimingSample { t, kind, seconds, instances });
    }
    Ok(outcome)
}

/// Zero-velocity residual 1σ: configured floor combined with the per-sample
/// white noise `density·√rate` of the raw readings.
fn zupt_noise(config: &ScenarioConfig, readings: &[crate::models::ImuReading]) -> (f64, f64) {
    let dt = match readings {
        [a, b, ..] if b.t > a.t => b.t - a.t,
        _ => return config.zupt_sigma,
    };
    let sample = |density: f64| density / dt.sqrt();
    (
        config.zupt_sigma.0.hypot(sample(config.imu_noise.accel_noise_density)),
        config.zupt_sigma.1.hypot(sample(config.imu_noise.gyro_noise_density)),
    )
}

/// Calibration sample for a range between an unknown anchor and `reference`,
/// if the reference position is available.
fn reference_sample(
    config: &ScenarioConfig,
    handler: &InstanceHandler,
    truth: &super::GroundTruth,
    reference: InstanceId,
    t: f64,
    range: f64,
) -> Option<CalibrationSample> {
    let (position, sigma) = if let Some(lever) = config.tags.get(&reference) {
        let p = if config.calibrate_with_truth {
            truth.pose_at(t)?.transform_point(lever)
        } else {
            tag_position(handler.belief(IMU_ID)?.mean.as_imu()?, lever)
        };
        (p, config.calibration_sigma_position)
    } else if let Some(p) = config.known_anchors.get(&reference) {
        // surveyed position: a static reference keeps its group static
        (*p, config.known_anchor_sigma)
    } else {
        return None;
    };
    CalibrationSample::new(t, reference, position, range, sigma, config.sigma_range).ok()
}

fn score(
    handler: &InstanceHandler,
    truth: &super::GroundTruth,
    t: f64,
    trajectory: &mut Vec<(f64, Pose)>,
    nees: &mut Vec<(f64, f64)>,
    position_errors: &mut Vec<Vector3<f64>>,
    orientation_errors: &mut Vec<f64>,
) {
    let Some(belief) = handler.belief(IMU_ID) else { return };
    let Some(state) = belief.mean.as_imu() else { return };
    let Some(true_pose) = truth.interpolate(belief.timestamp) else { return };
    let e = state.position - true_pose.position;
    position_errors.push(e);
    orientation_errors.push(orientation_error_deg(&state.orientation, &true_pose.orientation));
    if let Some(v) = position_nees(&e, &belief.covariance.fixed_view::<3, 3>(POS, POS).into_owned()) {
        nees.push((t, v));
    }
    trajectory.push((t, Pose::new(state.position, state.orientation)));
}
