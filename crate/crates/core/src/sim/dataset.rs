//! Complete synthetic datasets: ground truth, IMU, barometer and meshed ranges.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::{gaussian3, synthesize_baro, synthesize_imu, ImuSynthesis};
use super::trajectory::{GroundTruth, SpiralTrajectory, TrajectorySpec};
use super::SimError;
use crate::mesh::{simulate_mesh, MeshConfig, MeshOutput, NodeLayout, OutlierModel, RangeSample, RangeSynthesis};
use crate::models::{BaroParams, ImuReading, RangeBiasTable};
use crate::state::InstanceId;

pub const IMU_ID: InstanceId = InstanceId(1);
pub const BARO_ID: InstanceId = InstanceId(2);
pub const TAG_IDS: [InstanceId; 2] = [InstanceId(100), InstanceId(105)];
pub const KNOWN_ANCHOR_IDS: [InstanceId; 4] = [InstanceId(101), InstanceId(102), InstanceId(103), InstanceId(104)];
pub const UNKNOWN_ANCHOR_IDS: [InstanceId; 5] =
    [InstanceId(106), InstanceId(107), InstanceId(108), InstanceId(109), InstanceId(110)];

/// Default anchor layout over the 5 m × 8 m flight area.
pub fn default_anchor_positions() -> BTreeMap<InstanceId, Vector3<f64>> {
    [
        (101, [0.0, 0.0, 0.3]),
        (102, [5.0, 0.0, 1.8]),
        (103, [5.0, 8.0, 0.5]),
        (104, [0.0, 8.0, 2.6]),
        (106, [0.3, 2.5, 1.1]),
        (107, [4.7, 5.5, 3.3]),
        (108, [2.0, 0.2, 2.4]),
        (109, [3.0, 7.8, 1.5]),
        (110, [4.8, 2.2, 0.6]),
    ]
    .into_iter()
    .map(|(id, p)| (InstanceId(id), Vector3::from(p)))
    .collect()
}

pub fn default_tag_lever_arms() -> BTreeMap<InstanceId, Vector3<f64>> {
    [(TAG_IDS[0], Vector3::new(0.2, 0.0, 0.05)), (TAG_IDS[1], Vector3::new(-0.2, 0.0, 0.05))].into_iter().collect()
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    /// Rate of the recorded ground-truth poses, Hz.
    pub truth_rate: f64,
    pub imu: ImuSynthesis,
    /// 1σ of the initial gyroscope and accelerometer biases.
    pub initial_bias_sigma: (f64, f64),
    pub baro: BaroParams,
    pub baro_rate: f64,
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    pub anchors: BTreeMap<InstanceId, Vector3<f64>>,
    pub slot_duration: f64,
    pub drop_probability: f64,
    pub sigma_range: f64,
    pub outlier_probability: f64,
    pub biases: RangeBiasTable,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectory: TrajectorySpec::default(),
            truth_rate: 100.0,
            imu: ImuSynthesis::default(),
            initial_bias_sigma: (2e-3, 2e-2),
            baro: BaroParams { lever_arm: Vector3::new(0.0, 0.0, 0.1), ..BaroParams::default() },
            baro_rate: 20.0,
            tags: default_tag_lever_arms(),
            anchors: default_anchor_positions(),
            slot_duration: 0.01,
            drop_probability: 0.0,
            sigma_range: 0.1,
            outlier_probability: 0.0,
            biases: RangeBiasTable::new(),
        }
    }
}

impl DatasetConfig {
    pub fn layout(&self) -> NodeLayout {
        NodeLayout { tags: self.tags.clone(), anchors: self.anchors.clone() }
    }

    pub fn mesh(&self) -> Result<MeshConfig, SimError> {
        let ids = self.tags.keys().chain(self.anchors.keys()).copied().collect();
        Ok(MeshConfig::new(ids, self.slot_duration, self.drop_probability)?)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub truth: GroundTruth,
    pub imu: Vec<ImuReading>,
    /// `(t, pressure)`.
    pub baro: Vec<(f64, f64)>,
    pub ranges: Vec<RangeSample>,
    /// Parallel to `ranges` for generated data; empty when the labels are
    /// unknown.
    pub range_outliers: Vec<bool>,
    pub dropped_slots: usize,
    pub true_gyro_bias: Vector3<f64>,
    pub true_accel_bias: Vector3<f64>,
}

/// Independent random streams so each sensor's samples depend only on the
/// seed and its own settings.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset, SimError> {
    let trajectory = SpiralTrajectory::new(config.trajectory)?;
    let truth = trajectory.ground_truth(config.truth_rate)?;

    let mut bias_rng = stream(config.seed, 0);
    let mut imu_cfg = config.imu;
    imu_cfg.initial_gyro_bias += gaussian3(&mut bias_rng, config.initial_bias_sigma.0);
    imu_cfg.initial_accel_bias += gaussian3(&mut bias_rng, config.initial_bias_sigma.1);
    let imu = synthesize_imu(&trajectory, &imu_cfg, &mut stream(config.seed, 1))?;
    let baro = synthesize_baro(&trajectory, &config.baro, config.baro_rate, &mut stream(config.seed, 2))?;

    let layout = config.layout();
    let synthesis = RangeSynthesis {
        layout: &layout,
        biases: &config.biases,
        sigma: config.sigma_range,
        outliers: OutlierModel::new(config.outlier_probability)?,
    };
    let MeshOutput { samples, outlier, dropped, .. } = simulate_mesh(
        &config.mesh()?,
        &truth,
        &synthesis,
        truth.start(),
        truth.end(),
        &mut stream(config.seed, 3),
    )?;
    Ok(Dataset {
        truth,
        imu,
        baro,
        ranges: samples,
        range_outliers: outlier,
        dropped_slots: dropped,
        true_gyro_bias: imu_cfg.initial_gyro_bias,
        true_accel_bias: imu_cfg.initial_accel_bias,
    })
}
