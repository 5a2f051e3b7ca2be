//! Synthetic fly-by calibration samples generated directly from the range
//! model along the default spiral flight.

use super::*;
use meshfuse_core::calib::CalibrationSample;
use meshfuse_core::sim::{default_tag_lever_arms, SpiralTrajectory, TrajectorySpec};
use meshfuse_core::state::PoseSource;
use rand_distr::Normal;

/// Range corruption applied by [`flyby`].
#[derive(Clone, Copy)]
pub struct Noise {
    pub sigma_range: f64,
    pub sigma_position: f64,
    pub outliers: f64,
}

pub const NOISELESS: Noise = Noise { sigma_range: 0.0, sigma_position: 0.0, outliers: 0.0 };

/// Reference groups: tags ride the spiral flight, static references sit at a
/// fixed position. Each carries `(γ, β)`.
pub struct Geometry {
    pub tags: Vec<(InstanceId, Vector3<f64>, f64, f64)>,
    pub fixed: Vec<(InstanceId, Vector3<f64>, f64)>,
    pub period: f64,
}

impl Geometry {
    pub fn tags_only() -> Self {
        let tags = default_tag_lever_arms().into_iter().map(|(id, lever)| (id, lever, 0.0, 1.0)).collect();
        Self { tags, fixed: Vec::new(), period: 0.5 }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    }
}

/// Ranges `β‖a − p‖ + γ + ν`; outliers add `U[0.5, 3]` m. Tag reference
/// positions are reported with `σ_p` noise.
pub fn flyby(rng: &mut ChaCha8Rng, anchor: Vector3<f64>, geometry: &Geometry, noise: Noise) -> Vec<CalibrationSample> {
    let trajectory = SpiralTrajectory::new(TrajectorySpec::default()).unwrap();
    let mut out = Vec::new();
    let corrupt = |rng: &mut ChaCha8Rng, d: f64| {
        let mut z = d + gaussian(rng, noise.sigma_range);
        if rng.random::<f64>() < noise.outliers {
            z += rng.random_range(0.5..3.0);
        }
        z
    };
    let steps = (trajectory.duration() / geometry.period) as usize;
    for k in 0..steps {
        let t = k as f64 * geometry.period;
        let pose = trajectory.pose_at(t).unwrap();
        for &(id, lever, gamma, beta) in &geometry.tags {
            let p = pose.transform_point(&lever);
            let z = corrupt(rng, beta * (anchor - p).norm() + gamma);
            let reported = p + normal3(rng, noise.sigma_position);
            out.push(CalibrationSample::new(t, id, reported, z, noise.sigma_position, noise.sigma_range).unwrap());
        }
        for &(id, p, gamma) in &geometry.fixed {
            let z = corrupt(rng, (anchor - p).norm() + gamma);
            out.push(CalibrationSample::new(t, id, p, z, 0.01, noise.sigma_range).unwrap());
        }
    }
    out
}

/// Random anchor beside the flight area, clear of the flight path.
pub fn random_anchor(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.random_range(-3.0..-0.5), rng.random_range(0.0..8.0), rng.random_range(0.3..3.0))
}

