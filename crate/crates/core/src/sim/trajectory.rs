//! Analytic spiral flight and sampled ground truth.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::jet::Jet2;
use super::SimError;
use crate::state::{Pose, PoseSource};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    /// Ground position of take-off and landing.
    pub home: Vector3<f64>,
    /// Centre of the spiral in the horizontal plane.
    pub center: [f64; 2],
    pub rest_duration: f64,
    pub takeoff_height: f64,
    pub takeoff_duration: f64,
    /// Semi-axes of the elliptical spiral, m.
    pub radii: [f64; 2],
    pub turns: f64,
    pub top_height: f64,
    pub spiral_duration: f64,
    pub descent_duration: f64,
    /// Fraction of the spiral spent blending the radius in and out.
    pub radius_blend: f64,
    /// Roll and pitch amplitudes, rad.
    pub tilt: [f64; 2],
    /// Horizontal area the flight must stay in: `[x_min, x_max, y_min, y_max]`.
    pub bounds: [f64; 4],
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            home: Vector3::new(2.5, 4.0, 0.0),
            center: [2.5, 4.0],
            rest_duration: 3.0,
            takeoff_height: 2.0,
            takeoff_duration: 8.0,
            radii: [2.0, 3.5],
            turns: 3.0,
            top_height: 8.0,
            spiral_duration: 112.0,
            descent_duration: 14.0,
            radius_blend: 0.1,
            tilt: [0.05, 0.04],
            bounds: [0.0, 5.0, 0.0, 8.0],
        }
    }
}

impl TrajectorySpec {
    pub fn duration(&self) -> f64 {
        2.0 * self.rest_duration + self.takeoff_duration + self.spiral_duration + self.descent_duration
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let durations = [self.rest_duration, self.takeoff_duration, self.spiral_duration, self.descent_duration];
        if durations.iter().any(|d| !(*d >= 0.0)) || !(self.duration() > 0.0) {
            return Err(SimError::InfeasibleTrajectory("durations must be non-negative with a positive total".into()));
        }
        if self.takeoff_duration == 0.0 || self.spiral_duration == 0.0 || self.descent_duration == 0.0 {
            return Err(SimError::InfeasibleTrajectory("flight phases need positive durations".into()));
        }
        if !(self.top_height >= self.home.z + self.takeoff_height) || self.takeoff_height < 0.0 {
            return Err(SimError::InfeasibleTrajectory("top height below take-off height".into()));
        }
        if !(self.radius_blend > 0.0 && self.radius_blend <= 0.5) {
            return Err(SimError::InfeasibleTrajectory("radius blend must lie in (0, 0.5]".into()));
        }
        let [x0, x1, y0, y1] = self.bounds;
        let inside = |x: f64, y: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;
        let [cx, cy] = self.center;
        let [rx, ry] = self.radii;
        if !inside(self.home.x, self.home.y) || !inside(cx - rx, cy - ry) || !inside(cx + rx, cy + ry) {
            return Err(SimError::InfeasibleTrajectory("flight leaves the area bounds".into()));
        }
        Ok(())
    }
}

/// Kinematic state of the body at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose,
    /// World frame.
    pub velocity: Vector3<f64>,
    /// World frame, excluding gravity.
    pub acceleration: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

/// Closed-form C² spiral: rest, take-off, elliptical spirals upwards,
/// descent, rest. The horizontal offset from the home position is blended
/// in and out so every phase boundary is at most a change in acceleration
/// rate.
#[derive(Clone, Copy, Debug)]
pub struct SpiralTrajectory {
    spec: TrajectorySpec,
}

impl SpiralTrajectory {
    pub fn new(spec: TrajectorySpec) -> Result<Self, SimError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn duration(&self) -> f64 {
        self.spec.duration()
    }

    /// Progress through `[start, start + length]` as a jet in `[0, 1]`.
    fn phase(t: f64, start: f64, length: f64) -> Jet2 {
        Jet2::affine(t, 1.0 / length, -start / length)
    }

    /// Position and ZYX Euler angles as jets.
    fn jets(&self, t: f64) -> ([Jet2; 3], [Jet2; 3]) {
        let s = &self.spec;
        let t_takeoff = s.rest_duration;
        let t_spiral = t_takeoff + s.takeoff_duration;
        let t_descent = t_spiral + s.spiral_duration;

        let up = Self::phase(t, t_takeoff, s.takeoff_duration).smoothstep();
        let u = Self::phase(t, t_spiral, s.spiral_duration);
        let climb = u.smoothstep();
        let down = Self::phase(t, t_descent, s.descent_duration).smoothstep();
        let blend_in = (u * (1.0 / s.radius_blend)).smoothstep();
        let blend_out = ((-u + 1.0) * (1.0 / s.radius_blend)).smoothstep();
        let rho = blend_in * blend_out;

        let angle = climb * (2.0 * std::f64::consts::PI * s.turns);
        let top = s.top_height - s.home.z - s.takeoff_height;
        let z = up * s.takeoff_height + climb * top - down * (s.takeoff_height + top) + s.home.z;

        // horizontal offset moves from home to the ellipse start as the radius blends in
        let [cx, cy] = s.center;
        let [rx, ry] = s.radii;
        let ex = angle.cos() * rx + (cx - s.home.x);
        let ey = angle.sin() * ry + (cy - s.home.y);
        let x = rho * ex + s.home.x;
        let y = rho * ey + s.home.y;

        let yaw = angle;
        let roll = rho * (angle * 2.0).sin() * s.tilt[0];
        let pitch = rho * (angle * 3.0).cos() * s.tilt[1];
        ([x, y, z], [roll, pitch, yaw])
    }

    pub fn sample(&self, t: f64) -> TruthSample {
        let ([x, y, z], [roll, pitch, yaw]) = self.jets(t);
        let orientation = UnitQuaternion::from_euler_angles(roll.v, pitch.v, yaw.v);
        let (sr, cr) = roll.v.sin_cos();
        let (sp, cp) = pitch.v.sin_cos();
        let angular_velocity = Vector3::new(
            roll.d1 - yaw.d1 * sp,
            pitch.d1 * cr + yaw.d1 * cp * sr,
            -pitch.d1 * sr + yaw.d1 * cp * cr,
        );
        TruthSample {
            t,
            pose: Pose::new(Vector3::new(x.v, y.v, z.v), orientation),
            velocity: Vector3::new(x.d1, y.d1, z.d1),
            acceleration: Vector3::new(x.d2, y.d2, z.d2),
            angular_velocity,
        }
    }

    pub fn ground_truth(&self, rate: f64) -> Result<GroundTruth, SimError> {
        if !(rate >= 60.0) {
            return Err(SimError::InvalidRate(rate));
        }
        let n = (self.duration() * rate).round() as usize;
        let samples = (0..=n).map(|k| self.sample(k as f64 / rate)).collect();
        GroundTruth::new(samples)
    }
}

impl PoseSource for SpiralTrajectory {
    fn pose_at(&self, t: f64) -> Option<Pose> {
        (t >= 0.0 && t <= self.duration()).then(|| self.sample(t).pose)
    }
}

/// Poses sampled at a fixed rate; queries between samples interpolate
/// position linearly and orientation by slerp.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    samples: Vec<TruthSample>,
}

impl GroundTruth {
    /// Samples must be strictly increasing in time.
    pub fn new(samples: Vec<TruthSample>) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::EmptyTruth);
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(SimError::UnorderedTruth);
        }
        Ok(Self { samples })
    }

    /// Poses only; derivatives are left at zero.
    pub fn from_poses(poses: Vec<(f64, Pose)>) -> Result<Self, SimError> {
        Self::new(
            poses
                .into_iter()
                .map(|(t, pose)| TruthSample {
                    t,
                    pose,
                    velocity: Vector3::zeros(),
                    acceleration: Vector3::zeros(),
                    angular_velocity: Vector3::zeros(),
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TruthSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Indices of the samples bracketing `t`.
    pub fn bracket(&self, t: f64) -> Option<(usize, usize)> {
        if !(t >= self.start() && t <= self.end()) {
            return None;
        }
        let hi = self.samples.partition_point(|s| s.t < t);
        if hi == 0 {
            return Some((0, 0));
        }
        Some((hi - 1, hi))
    }

    pub fn interpolate(&self, t: f64) -> Option<Pose> {
        let (lo, hi) = self.bracket(t)?;
        let (a, b) = (&self.samples[lo], &self.samples[hi]);
        if lo == hi || b.t == t {
            return Some(b.pose);
        }
        let w = (t - a.t) / (b.t - a.t);
        let position = a.pose.position.lerp(&b.pose.position, w);
        let orientation = a.pose.orientation.slerp(&b.pose.orientation, w);
        Some(Pose::new(position, orientation))
    }

    pub fn rotation_at(&self, t: f64) -> Option<Matrix3<f64>> {
        self.interpolate(t).map(|p| p.orientation.to_rotation_matrix().into_inner())
    }
}

impl PoseSource for GroundTruth {
    fn pose_at(&self, t: f64) -> Option<Pose> {
        self.interpolate(t)
    }
}
