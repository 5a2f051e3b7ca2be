//! Every analytic Jacobian against central finite differences on random
//! states.
mod common;

use common::jacobians;

const TRIALS: usize = 150;
const TOLERANCE: f64 = 1e-5;

fn check(name: &str, seed: u64) {
    let (_, checker) = jacobians::CHECKS.iter().find(|(n, _)| *n == name).unwrap();
    let err = checker(seed, TRIALS);
    assert!(err < TOLERANCE, "{name}: worst relative error {err:e}");
}

#[test]
fn imu_transition_matches_finite_differences() {
    check("imu transition", 1);
}

#[test]
fn baro_jacobian_matches_finite_differences() {
    check("barometer", 2);
}

#[test]
fn tag_anchor_range_jacobian_matches_finite_differences() {
    check("tag-anchor range", 3);
}

#[test]
fn anchor_anchor_range_jacobian_matches_finite_differences() {
    check("anchor-anchor range", 4);
}

#[test]
fn zupt_jacobian_matches_finite_differences() {
    check("zero velocity", 5);
}
