//! Worst relative error of each analytic Jacobian against central finite
//! differences over random states.

use super::*;
use meshfuse_core::models::imu::transition_matrix;
use rand::SeedableRng;

const STEP: f64 = 1e-6;
const ANCHOR: InstanceId = InstanceId(101);

fn perturbed(state: &ImuState, delta: &DVector<f64>) -> ImuState {
    *boxplus(&StateMean::Imu(*state), delta).unwrap().as_imu().unwrap()
}

fn random_reading(rng: &mut ChaCha8Rng) -> ImuReading {
    ImuReading::new(0.0, Vector3::new(0.0, 0.0, 9.81) + normal3(rng, 2.0), normal3(rng, 1.0))
}

fn random_bias(rng: &mut ChaCha8Rng) -> RangeBias {
    RangeBias::new(rng.random_range(-0.3..0.3), rng.random_range(0.95..1.05)).unwrap()
}

/// Jacobian of the prediction `h = z - residual` with respect to `delta`.
fn observation_fd(dim: usize, obs: impl Fn(&DVector<f64>) -> LinearizedObservation) -> DMatrix<f64> {
    central_difference(dim, STEP, |d| -obs(d).residual)
}

fn stacked(obs: &LinearizedObservation, ids: &[(InstanceId, usize)]) -> DMatrix<f64> {
    let n: usize = ids.iter().map(|(_, d)| d).sum();
    let mut h = DMatrix::zeros(obs.dim(), n);
    let mut offset = 0;
    for (id, dim) in ids {
        h.view_mut((0, offset), (obs.dim(), *dim)).copy_from(obs.block(*id).unwrap());
        offset += dim;
    }
    h
}

pub fn imu_transition(seed: u64, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let state = random_imu_state(&mut rng);
        let reading = random_reading(&mut rng);
        let dt = rng.random_range(0.001..0.1);
        let nominal = StateMean::Imu(propagate_mean(&state, &reading, dt));
        let fd = central_difference(15, STEP, |d| {
            let next = propagate_mean(&perturbed(&state, d), &reading, dt);
            boxminus(&StateMean::Imu(next), &nominal).unwrap()
        });
        let phi = transition_matrix(&state, &reading, dt);
        let phi = DMatrix::from_iterator(15, 15, phi.iter().copied());
        let err = relative_error(&phi, &fd, 1.0);
        worst = worst.max(err);
    }
    worst
}

pub fn baro(seed: u64, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let state = random_imu_state(&mut rng);
        let params = BaroParams { lever_arm: normal3(&mut rng, 0.2), ..BaroParams::default() };
        let pressure = params.pressure(rng.random_range(-5.0..20.0));
        let obs = |d: &DVector<f64>| baro_height_observation(IMU, &perturbed(&state, d), &params, pressure, 1.0).unwrap();
        let fd = observation_fd(15, obs);
        let analytic = obs(&DVector::zeros(15)).block(IMU).unwrap().clone();
        let err = relative_error(&analytic, &fd, 1.0);
        worst = worst.max(err);
    }
    worst
}

pub fn tag_anchor_range(seed: u64, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let state = random_imu_state(&mut rng);
        let lever = normal3(&mut rng, 0.3);
        let anchor = state.position + normal3(&mut rng, 3.0) + Vector3::new(0.0, 0.0, 1.0);
        let bias = random_bias(&mut rng);
        let obs = |d: &DVector<f64>| {
            let s = perturbed(&state, &d.rows(0, 15).into_owned());
            let a = anchor + Vector3::new(d[15], d[16], d[17]);
            range_observation_tag_anchor(IMU, &s, &lever, ANCHOR, &a, bias, 4.0, 0.01).unwrap()
        };
        let fd = observation_fd(18, obs);
        let analytic = stacked(&obs(&DVector::zeros(18)), &[(IMU, 15), (ANCHOR, 3)]);
        let err = relative_error(&analytic, &fd, 1.0);
        worst = worst.max(err);
    }
    worst
}

pub fn anchor_anchor_range(seed: u64, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let other = InstanceId(102);
    for _ in 0..trials {
        let pi = normal3(&mut rng, 4.0);
        let pj = pi + normal3(&mut rng, 3.0) + Vector3::new(0.5, 0.0, 0.0);
        let bias = random_bias(&mut rng);
        let obs = |d: &DVector<f64>| {
            let a = pi + Vector3::new(d[0], d[1], d[2]);
            let b = pj + Vector3::new(d[3], d[4], d[5]);
            range_observation_anchor_anchor(ANCHOR, &a, other, &b, bias, 3.0, 0.01).unwrap()
        };
        let fd = observation_fd(6, obs);
        let analytic = stacked(&obs(&DVector::zeros(6)), &[(ANCHOR, 3), (other, 3)]);
        let err = relative_error(&analytic, &fd, 1.0);
        worst = worst.max(err);
    }
    worst
}

pub fn zupt(seed: u64, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let state = random_imu_state(&mut rng);
        let reading = random_reading(&mut rng);
        let noise = DMatrix::identity(6, 6) * 0.01;
        let obs = |d: &DVector<f64>| zupt_observation(IMU, &perturbed(&state, d), &reading, noise.clone()).unwrap();
        let fd = observation_fd(15, obs);
        let analytic = obs(&DVector::zeros(15)).block(IMU).unwrap().clone();
        let err = relative_error(&analytic, &fd, 1.0);
        worst = worst.max(err);
    }
    worst
}

/// Every model Jacobian with its checker.
pub const CHECKS: [(&str, fn(u64, usize) -> f64); 5] = [
    ("imu transition", imu_transition),
    ("barometer", baro),
    ("tag-anchor range", tag_anchor_range),
    ("anchor-anchor range", anchor_anchor_range),
    ("zero velocity", zupt),
];
