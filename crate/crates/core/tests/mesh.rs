//! Mesh schedule, cycle rate and range synthesis.
use meshfuse_core::mesh::{
    mesh_cycle_rate, schedule_cycle, simulate_mesh, MeshConfig, MeshRateReport, NodeLayout, OutlierModel,
    RangeSynthesis,
};
use meshfuse_core::models::RangeBiasTable;
use meshfuse_core::sim::{default_anchor_positions, default_tag_lever_arms, SpiralTrajectory, TrajectorySpec};
use meshfuse_core::InstanceId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(n: usize) -> Vec<InstanceId> {
    (0..n).map(|k| InstanceId(100 + k as u32)).collect()
}

fn layout() -> NodeLayout {
    NodeLayout { tags: default_tag_lever_arms(), anchors: default_anchor_positions() }
}

fn mesh() -> MeshConfig {
    let layout = layout();
    MeshConfig::new(layout.tags.keys().chain(layout.anchors.keys()).copied().collect(), 0.01, 0.0).unwrap()
}

#[test]
fn eleven_nodes_at_ten_milliseconds_cycle_at_one_hertz() {
    assert_eq!(mesh_cycle_rate(11, 0.010).unwrap(), 1.0);
    let report = MeshRateReport::new(11, 0.010).unwrap();
    assert_eq!(report.slots_per_cycle, 110);
    assert!((report.schedule_rate - 1.0 / 1.1).abs() < 1e-12);
    assert!((report.discrepancy() - 1.1).abs() < 1e-12);
    let text = report.to_string();
    assert!(text.contains("discrepancy=1.100000"), "{text}");
}

#[test]
fn rejects_degenerate_meshes() {
    assert!(mesh_cycle_rate(1, 0.01).is_err());
    assert!(mesh_cycle_rate(3, 0.0).is_err());
    assert!(MeshConfig::new(vec![InstanceId(0), InstanceId(1)], 0.01, 0.0).is_err());
    assert!(MeshConfig::new(ids(3), 0.01, 1.5).is_err());
}

proptest! {
    #[test]
    fn schedule_has_every_ordered_pair_once(n in 2usize..16, slot in 0.001f64..0.05, start in 0.0f64..100.0) {
        let config = MeshConfig::new(ids(n), slot, 0.0).unwrap();
        let slots = schedule_cycle(&config, start);
        prop_assert_eq!(slots.len(), n * (n - 1));
        prop_assert_eq!(config.slots_per_cycle(), n * (n - 1));
        let mut pairs: Vec<_> = slots.iter().map(|s| (s.initiator, s.responder)).collect();
        let sorted = { let mut p = pairs.clone(); p.sort(); p };
        prop_assert_eq!(&pairs, &sorted);
        pairs.dedup();
        prop_assert_eq!(pairs.len(), n * (n - 1));
        for (k, s) in slots.iter().enumerate() {
            prop_assert_ne!(s.initiator, s.responder);
            prop_assert!((s.t - (start + k as f64 * slot)).abs() < 1e-9);
        }
        prop_assert_eq!(schedule_cycle(&config, start), slots);
    }
}

#[test]
fn outlier_fraction_matches_probability() {
    let trajectory = SpiralTrajectory::new(TrajectorySpec::default()).unwrap();
    let layout = layout();
    let biases = RangeBiasTable::new();
    let synthesis = RangeSynthesis { layout: &layout, biases: &biases, sigma: 0.1, outliers: OutlierModel::new(0.15).unwrap() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = simulate_mesh(&mesh(), &trajectory, &synthesis, 0.0, 140.0, &mut rng).unwrap();
    let fraction = out.outlier.iter().filter(|&&o| o).count() as f64 / out.samples.len() as f64;
    assert!((0.12..=0.18).contains(&fraction), "outlier fraction {fraction}");
    assert_eq!(out.cycles, 127);
    assert_eq!(out.samples.len() + out.skipped, 127 * 110);
}

#[test]
fn outliers_are_positive_and_bounded() {
    let trajectory = SpiralTrajectory::new(TrajectorySpec::default()).unwrap();
    let layout = layout();
    let biases = RangeBiasTable::new();
    let synthesis = RangeSynthesis { layout: &layout, biases: &biases, sigma: 0.0, outliers: OutlierModel::new(0.3).unwrap() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = simulate_mesh(&mesh(), &trajectory, &synthesis, 0.0, 20.0, &mut rng).unwrap();
    for (s, &outlier) in out.samples.iter().zip(&out.outlier) {
        let a = layout.position(s.initiator, s.t, &trajectory).unwrap();
        let b = layout.position(s.responder, s.t, &trajectory).unwrap();
        let error = s.range - (a - b).norm();
        if outlier {
            assert!((0.5..=3.0).contains(&error), "outlier error {error}");
        } else {
            assert!(error.abs() < 1e-12);
        }
    }
}

#[test]
fn dropped_slots_follow_probability() {
    let trajectory = SpiralTrajectory::new(TrajectorySpec::default()).unwrap();
    let layout = layout();
    let biases = RangeBiasTable::new();
    let synthesis = RangeSynthesis { layout: &layout, biases: &biases, sigma: 0.1, outliers: OutlierModel::none() };
    let config = MeshConfig::new(mesh().node_ids().to_vec(), 0.01, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let out = simulate_mesh(&config, &trajectory, &synthesis, 0.0, 140.0, &mut rng).unwrap();
    let total = out.cycles * config.slots_per_cycle();
    let fraction = out.dropped as f64 / total as f64;
    assert!((fraction - 0.2).abs() < 0.02, "drop fraction {fraction}");
    assert_eq!(out.dropped + out.samples.len() + out.skipped, total);
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let trajectory = SpiralTrajectory::new(TrajectorySpec::default()).unwrap();
    let layout = layout();
    let biases = RangeBiasTable::new();
    let synthesis = RangeSynthesis { layout: &layout, biases: &biases, sigma: 0.1, outliers: OutlierModel::new(0.1).unwrap() };
    let run = |seed| simulate_mesh(&mesh(), &trajectory, &synthesis, 0.0, 30.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.outlier, b.outlier);
    assert_ne!(a.samples, c.samples);
}
