use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use meshfuse_core::io::{
    read_baro, read_imu, read_poses, read_ranges, write_baro, write_handovers, write_imu, write_poses,
    write_ranges, write_report, write_timing,
};
use meshfuse_core::mesh::{MeshRateReport, NodeLayout};
use meshfuse_core::sim::{
    evaluate_ranges, generate_dataset, run_scenario, AnchorCalibration, Dataset, GroundTruth, RangeEvalConfig,
};
use meshfuse_core::InstanceId;
use nalgebra::Vector3;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

const TRUTH: &str = "truth.csv";
const IMU: &str = "imu.csv";
const BARO: &str = "baro.csv";
const RANGES: &str = "ranges.csv";

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingData(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path).map_err(CliError::io(path))?))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), CliError> {
    let poses: Vec<_> = dataset.truth.samples().iter().map(|s| (s.t, s.pose)).collect();
    let path = dir.join(TRUTH);
    write_poses(create(&path)?, &poses).map_err(CliError::format(&path))?;
    let path = dir.join(IMU);
    write_imu(create(&path)?, &dataset.imu).map_err(CliError::format(&path))?;
    let path = dir.join(BARO);
    write_baro(create(&path)?, &dataset.baro).map_err(CliError::format(&path))?;
    let path = dir.join(RANGES);
    write_ranges(create(&path)?, &dataset.ranges).map_err(CliError::format(&path))
}

fn read_dataset(dir: &Path, config: &RunConfig) -> Result<Dataset, CliError> {
    let path = dir.join(TRUTH);
    let poses = read_poses(open(&path)?).map_err(CliError::format(&path))?;
    let path = dir.join(IMU);
    let imu = read_imu(open(&path)?).map_err(CliError::format(&path))?;
    let path = dir.join(BARO);
    let baro = read_baro(open(&path)?).map_err(CliError::format(&path))?;
    let path = dir.join(RANGES);
    let ranges = read_ranges(open(&path)?).map_err(CliError::format(&path))?;
    let declared = |id: &InstanceId| {
        config.tags.contains_key(id) || config.known_anchors.contains_key(id) || config.unknown_anchors.contains_key(id)
    };
    if let Some(r) = ranges.iter().find(|r| !declared(&r.initiator) || !declared(&r.responder)) {
        let id = if declared(&r.initiator) { r.responder } else { r.initiator };
        return Err(CliError::Config(format!("{} references device {id}, which the config does not declare", path.display())));
    }
    Ok(Dataset {
        truth: GroundTruth::from_poses(poses)?,
        imu,
        baro,
        ranges,
        range_outliers: Vec::new(),
        dropped_slots: 0,
        true_gyro_bias: Vector3::zeros(),
        true_accel_bias: Vector3::zeros(),
    })
}

pub fn generate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    for &seed in &config.seeds {
        let dataset = generate_dataset(&config.dataset(seed)?)?;
        let dir = seed_dir(out, seed);
        write_dataset(&dir, &dataset)?;
        println!(
            "seed {seed}: {} imu, {} baro, {} ranges, {} dropped slots -> {}",
            dataset.imu.len(),
            dataset.baro.len(),
            dataset.ranges.len(),
            dataset.dropped_slots,
            dir.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    t: f64,
    anchor_id: u32,
    reference_id: u32,
    range: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inlier: Option<bool>,
}

fn write_samples(path: &Path, calibrations: &[AnchorCalibration], ransac: bool) -> Result<(), CliError> {
    let rows = calibrations.iter().flat_map(|c| {
        c.samples.iter().zip(&c.result.inliers).map(move |(s, inlier)| SampleRow {
            t: s.t,
            anchor_id: c.result.anchor_id.0,
            reference_id: s.reference_id.0,
            range: s.range,
            inlier: ransac.then_some(*inlier),
        })
    });
    write_csv(path, rows)
}

#[derive(Serialize)]
struct CalibrationRow {
    seed: u64,
    anchor_id: u32,
    status: String,
    px: Option<f64>,
    py: Option<f64>,
    pz: Option<f64>,
    error: Option<f64>,
    inliers: Option<usize>,
    samples: Option<usize>,
}

#[derive(Serialize)]
struct CalibrationSummaryRow {
    anchor_id: String,
    mean_error: Option<f64>,
    seeds: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn show(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Calibrates every unknown anchor from the ranges of the whole flight.
pub fn calibrate(config: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let truth = config.anchor_truth();
    let anchors: Vec<InstanceId> = config.unknown_anchors.keys().copied().collect();
    let mut rows = Vec::new();
    let mut per_anchor: BTreeMap<InstanceId, Vec<f64>> = BTreeMap::new();
    for &seed in &config.seeds {
        let dataset = read_dataset(&seed_dir(data, seed), config)?;
        let mut scenario = config.scenario(seed);
        scenario.triggers = vec![(dataset.truth.end(), anchors.clone())];
        let report = run_scenario(&scenario, &dataset, &truth)?;
        let dir = seed_dir(out, seed);
        let handovers: Vec<_> = report.calibrations.iter().map(|c| c.result.handover()).collect();
        let path = dir.join("calibration.json");
        write_handovers(create(&path)?, &handovers).map_err(CliError::format(&path))?;
        write_samples(&dir.join("calibration_samples.csv"), &report.calibrations, config.ransac)?;
        for c in &report.calibrations {
            let r = &c.result;
            let error = truth.get(&r.anchor_id).map(|p| (r.position - p).norm());
            if let Some(e) = error {
                per_anchor.entry(r.anchor_id).or_default().push(e);
            }
            rows.push(CalibrationRow {
                seed,
                anchor_id: r.anchor_id.0,
                status: "ok".into(),
                px: Some(r.position.x),
                py: Some(r.position.y),
                pz: Some(r.position.z),
                error,
                inliers: Some(r.inlier_count()),
                samples: Some(c.samples.len()),
            });
        }
        for f in &report.failed {
            log::warn!("seed {seed}: anchor {} not calibrated: {}", f.anchor_id, f.reason);
            rows.push(CalibrationRow {
                seed,
                anchor_id: f.anchor_id.0,
                status: format!("failed: {}", f.reason),
                px: None,
                py: None,
                pz: None,
                error: None,
                inliers: None,
                samples: None,
            });
        }
    }
    write_csv(&out.join("calibration_errors.csv"), &rows)?;

    let all: Vec<f64> = per_anchor.values().flatten().copied().collect();
    let mut summary: Vec<CalibrationSummaryRow> = per_anchor
        .iter()
        .map(|(id, e)| CalibrationSummaryRow { anchor_id: id.to_string(), mean_error: mean(e), seeds: e.len() })
        .collect();
    summary.push(CalibrationSummaryRow { anchor_id: "average".into(), mean_error: mean(&all), seeds: config.seeds.len() });
    write_csv(&out.join("calibration_summary.csv"), &summary)?;

    println!("anchor  mean error [m]  seeds");
    for row in &summary {
        println!("{:>6}  {:>14}  {:>5}", row.anchor_id, show(row.mean_error), row.seeds);
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummaryRow {
    seed: String,
    strategy: String,
    position_rmse: f64,
    orientation_rmse_deg: f64,
    mean_initial_anchor_error: Option<f64>,
    mean_final_anchor_error: Option<f64>,
    failed_anchors: usize,
}

pub fn run(config: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let truth = config.anchor_truth();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let dataset = read_dataset(&seed_dir(data, seed), config)?;
        let report = run_scenario(&config.scenario(seed), &dataset, &truth)?;
        let dir = seed_dir(out, seed);
        let path = dir.join("report.json");
        write_report(create(&path)?, &report).map_err(CliError::format(&path))?;
        let path = dir.join("timing.csv");
        write_timing(create(&path)?, &report.timing).map_err(CliError::format(&path))?;
        let path = dir.join("trajectory.csv");
        write_poses(create(&path)?, &report.trajectory).map_err(CliError::format(&path))?;
        let handovers: Vec<_> = report.calibrations.iter().map(|c| c.result.handover()).collect();
        let path = dir.join("calibration.json");
        write_handovers(create(&path)?, &handovers).map_err(CliError::format(&path))?;
        let finite = |v: Option<f64>| v.filter(|e| e.is_finite());
        rows.push(RunSummaryRow {
            seed: seed.to_string(),
            strategy: report.strategy.to_string(),
            position_rmse: report.position_rmse,
            orientation_rmse_deg: report.orientation_rmse_deg,
            mean_initial_anchor_error: finite(report.mean_initial_anchor_error()),
            mean_final_anchor_error: finite(report.mean_final_anchor_error()),
            failed_anchors: report.failed.len(),
        });
    }
    let column = |f: fn(&RunSummaryRow) -> Option<f64>| mean(&rows.iter().filter_map(f).collect::<Vec<_>>());
    let average = RunSummaryRow {
        seed: "mean".into(),
        strategy: config.strategy.to_string(),
        position_rmse: column(|r| Some(r.position_rmse)).unwrap_or(f64::NAN),
        orientation_rmse_deg: column(|r| Some(r.orientation_rmse_deg)).unwrap_or(f64::NAN),
        mean_initial_anchor_error: column(|r| r.mean_initial_anchor_error),
        mean_final_anchor_error: column(|r| r.mean_final_anchor_error),
        failed_anchors: rows.iter().map(|r| r.failed_anchors).sum(),
    };
    rows.push(average);
    write_csv(&out.join("summary.csv"), &rows)?;

    println!("seed  strategy  rmse [m]  rmse [deg]  anchor initial [m]  anchor final [m]  failed");
    for r in &rows {
        println!(
            "{:>4}  {:>8}  {:>8.3}  {:>10.2}  {:>18}  {:>16}  {:>6}",
            r.seed,
            r.strategy,
            r.position_rmse,
            r.orientation_rmse_deg,
            show(r.mean_initial_anchor_error),
            show(r.mean_final_anchor_error),
            r.failed_anchors
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PairRow {
    initiator: u32,
    responder: u32,
    count: usize,
    outliers: usize,
    gamma: f64,
    sigma: f64,
}

#[derive(Serialize)]
struct BinRow {
    initiator: u32,
    responder: u32,
    bin_start: f64,
    count: usize,
}

pub fn eval_ranges(config: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let layout = NodeLayout { tags: config.tags.clone(), anchors: config.anchor_truth() };
    let options = RangeEvalConfig { gate: config.range_gate, bin_width: config.bin_width };
    for &seed in &config.seeds {
        let dataset = read_dataset(&seed_dir(data, seed), config)?;
        let evaluation = evaluate_ranges(&dataset.ranges, &dataset.truth, &layout, &options);
        let dir = seed_dir(out, seed);
        let pairs = evaluation.pairs.iter().map(|p| PairRow {
            initiator: p.initiator.0,
            responder: p.responder.0,
            count: p.count,
            outliers: p.outliers,
            gamma: p.mean,
            sigma: p.std_dev,
        });
        write_csv(&dir.join("range_pairs.csv"), pairs)?;
        let bins = evaluation.pairs.iter().flat_map(|p| {
            p.histogram.bins().map(move |(bin_start, count)| BinRow {
                initiator: p.initiator.0,
                responder: p.responder.0,
                bin_start,
                count,
            })
        });
        write_csv(&dir.join("range_histogram.csv"), bins)?;
        println!("seed {seed}: {} pairs, {} samples skipped", evaluation.pairs.len(), evaluation.skipped);
        println!("initiator  responder  count  outliers  gamma [m]  sigma [m]");
        for p in &evaluation.pairs {
            println!(
                "{:>9}  {:>9}  {:>5}  {:>8}  {:>9.4}  {:>9.4}",
                p.initiator.0, p.responder.0, p.count, p.outliers, p.mean, p.std_dev
            );
        }
    }
    Ok(())
}

pub fn mesh_rate(nodes: usize, slot_duration: f64, out: &mut impl Write) -> Result<(), CliError> {
    let report = MeshRateReport::new(nodes, slot_duration)?;
    writeln!(out, "{report}").map_err(CliError::io(Path::new("stdout")))
}
