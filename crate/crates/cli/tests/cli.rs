//! End-to-end runs of the `meshfuse` binary on temporary directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn meshfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshfuse")).args(args).output().expect("binary runs")
}

fn succeed(args: &[&str]) -> String {
    let out = meshfuse(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a failing command and returns the parsed one-line error.
fn fail(args: &[&str]) -> serde_json::Value {
    let out = meshfuse(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("unparsable error line {line:?}: {e}"))
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn records(file: &Path) -> Vec<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(file).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| headers.iter().map(String::from).zip(r.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn float(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

/// Generated dataset of the default configuration plus `overrides`.
fn dataset(dir: &TempDir, overrides: &[&str]) -> String {
    let data = path(dir, "data");
    let mut args = vec!["generate", "--out", &data];
    for o in overrides {
        args.extend(["--set", o]);
    }
    succeed(&args);
    data
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (path(&dir, "a"), path(&dir, "b"), path(&dir, "c"));
    succeed(&["generate", "--out", &a, "--set", "seeds=3"]);
    succeed(&["generate", "--out", &b, "--set", "seeds=3"]);
    succeed(&["generate", "--out", &c, "--set", "seeds=4"]);
    for file in ["truth.csv", "imu.csv", "baro.csv", "ranges.csv"] {
        let read = |root: &str, seed: u32| fs::read(Path::new(root).join(format!("seed_{seed}")).join(file)).unwrap();
        assert_eq!(read(&a, 3), read(&b, 3), "{file}");
        if file != "truth.csv" {
            assert_ne!(read(&a, 3), read(&c, 4), "{file}");
        }
    }
    let header = fs::read_to_string(Path::new(&a).join("seed_3/ranges.csv")).unwrap();
    assert!(header.starts_with("t,id_initiator,id_responder,range\n"));
}

#[test]
fn range_rows_match_scheduled_slots() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "data");
    let stdout = succeed(&["generate", "--out", &data, "--set", "drop_probability=0.2"]);
    let words: Vec<&str> = stdout.split_whitespace().collect();
    let at = words.iter().position(|w| *w == "dropped").unwrap();
    let dropped: usize = words[at - 1].parse().unwrap();
    let rows = records(&Path::new(&data).join("seed_0/ranges.csv")).len();
    // 11 devices: 110 slots per 1.1 s cycle, 127 full cycles in 140 s
    assert_eq!(rows + dropped, 127 * 110);
    assert!(dropped > 0);
}

#[test]
fn noise_options_are_accepted() {
    let dir = TempDir::new().unwrap();
    for (k, (sigma, eps)) in [(0.1, 0.0), (0.2, 0.15)].into_iter().enumerate() {
        let out = path(&dir, &format!("d{k}"));
        let (s, e) = (format!("sigma_range={sigma}"), format!("outlier_probability={eps}"));
        succeed(&["generate", "--out", &out, "--set", &s, "--set", &e]);
    }
}

#[test]
fn noiseless_calibration_is_exact() {
    let dir = TempDir::new().unwrap();
    let data = dataset(&dir, &["data_sigma_range=0", "outlier_probability=0"]);
    let out = path(&dir, "cal");
    succeed(&["calibrate", "--data", &data, "--out", &out, "--set", "calibration_poses=truth", "--set", "ransac=false"]);
    let summary = records(&Path::new(&out).join("calibration_summary.csv"));
    let average = summary.iter().find(|r| r["anchor_id"] == "average").unwrap();
    assert!(float(average, "mean_error") < 1e-6, "{average:?}");
    assert_eq!(summary.len(), 6);
}

#[test]
fn ransac_flag_toggles_inlier_column() {
    let dir = TempDir::new().unwrap();
    let data = dataset(&dir, &[]);
    for (flag, expected) in [("ransac=true", true), ("ransac=false", false)] {
        let out = path(&dir, flag);
        succeed(&["calibrate", "--data", &data, "--out", &out, "--set", flag]);
        let samples = fs::read_to_string(Path::new(&out).join("seed_0/calibration_samples.csv")).unwrap();
        let header = samples.lines().next().unwrap();
        assert_eq!(header.ends_with(",inlier"), expected, "{header}");
        let errors = records(&Path::new(&out).join("calibration_errors.csv"));
        assert_eq!(errors.len(), 5);
        let handovers: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(Path::new(&out).join("seed_0/calibration.json")).unwrap()).unwrap();
        assert_eq!(handovers.as_array().unwrap().len(), 5);
        assert_eq!(handovers[0]["position_cov"].as_array().unwrap().len(), 9);
    }
}

#[test]
fn calibration_without_true_positions_omits_errors() {
    let dir = TempDir::new().unwrap();
    let data = dataset(&dir, &[]);
    let out = path(&dir, "cal");
    let unknown = "unknown_anchors=106;107;108;109;110";
    succeed(&["calibrate", "--data", &data, "--out", &out, "--set", unknown]);
    for row in records(&Path::new(&out).join("calibration_errors.csv")) {
        assert_eq!(row["status"], "ok");
        assert!(row["error"].is_empty());
        assert!(!row["px"].is_empty());
    }
}

/// Mean update time over updates with at least `min` and at most `max`
/// registered instances.
fn mean_update_time(timing: &[BTreeMap<String, String>], min: usize, max: usize) -> f64 {
    let v: Vec<f64> = timing
        .iter()
        .filter(|r| (min..=max).contains(&r["instances"].parse::<usize>().unwrap()))
        .map(|r| float(r, "seconds"))
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn run_reports_both_strategies() {
    let dir = TempDir::new().unwrap();
    let data = dataset(&dir, &[]);
    let mut timing = BTreeMap::new();
    for strategy in ["dp", "dah"] {
        let out = path(&dir, strategy);
        let s = format!("strategy={strategy}");
        succeed(&["run", "--data", &data, "--out", &out, "--set", &s]);
        let seed = Path::new(&out).join("seed_0");
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(seed.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["strategy"], strategy);
        let anchors = report["anchors"].as_array().unwrap();
        assert_eq!(anchors.len(), 5);
        for a in anchors {
            assert!(a["initial_error"].as_f64().unwrap() < 0.5);
            assert!(a["final_error"].as_f64().unwrap() < 0.5);
        }
        assert!(report["position_rmse"].as_f64().unwrap() < 0.3);
        let trajectory = records(&seed.join("trajectory.csv"));
        assert!(trajectory.len() > 1000);
        timing.insert(strategy, records(&seed.join("timing.csv")));
        let summary = records(&Path::new(&out).join("summary.csv"));
        assert_eq!(summary.last().unwrap()["seed"], "mean");
    }
    let dp_many = mean_update_time(&timing["dp"], 9, usize::MAX);
    let dah_many = mean_update_time(&timing["dah"], 9, usize::MAX);
    let dp_few = mean_update_time(&timing["dp"], 0, 5);
    assert!(dah_many < dp_many, "DAH {dah_many:e} s vs DP {dp_many:e} s");
    assert!(dp_many > dp_few, "DP {dp_few:e} s before, {dp_many:e} s after the anchors were added");
}

#[test]
fn range_evaluation_tables() {
    let dir = TempDir::new().unwrap();
    let data = dataset(&dir, &["outlier_probability=0", "injected_biases=100-101:0.25,1.0; 105-106:-0.1,1.0"]);
    let out = path(&dir, "eval");
    succeed(&["eval-ranges", "--data", &data, "--out", &out]);
    let pairs = records(&Path::new(&out).join("seed_0/range_pairs.csv"));
    assert_eq!(pairs.len(), 11 * 10);
    for row in &pairs {
        let key = (row["initiator"].as_str(), row["responder"].as_str());
        let injected = match key {
            ("100", "101") | ("101", "100") => 0.25,
            ("105", "106") | ("106", "105") => -0.1,
            _ => 0.0,
        };
        let tolerance = 3.0 * float(row, "sigma") / float(row, "count").sqrt();
        assert!((float(row, "gamma") - injected).abs() <= tolerance, "{row:?}");
    }
    let bins = records(&Path::new(&out).join("seed_0/range_histogram.csv"));
    let first: Vec<f64> = bins.iter().take_while(|r| r["initiator"] == "100" && r["responder"] == "101").map(|r| float(r, "bin_start")).collect();
    assert!(first.windows(2).all(|w| (w[1] - w[0] - 0.01).abs() < 1e-9));

    let coarse = path(&dir, "coarse");
    succeed(&["eval-ranges", "--data", &data, "--out", &coarse, "--set", "bin_width=0.05"]);
    let bins = records(&Path::new(&coarse).join("seed_0/range_histogram.csv"));
    let first: Vec<f64> = bins.iter().take_while(|r| r["initiator"] == "100" && r["responder"] == "101").map(|r| float(r, "bin_start")).collect();
    assert!(first.len() > 1 && first.windows(2).all(|w| (w[1] - w[0] - 0.05).abs() < 1e-9));
}

#[test]
fn mesh_rate_reports_discrepancy() {
    let stdout = succeed(&["mesh-rate", "--nodes", "11", "--slot", "0.01"]);
    assert!(stdout.contains("formula_rate=1.000000Hz"), "{stdout}");
    assert!(stdout.contains("slots=110"));
    assert!(stdout.contains("discrepancy=1.100000"));
    assert_eq!(fail(&["mesh-rate", "--nodes", "1", "--slot", "0.01"])["error"], "mesh");
}

#[test]
fn failures_are_one_line_errors() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "missing");
    let error = fail(&["eval-ranges", "--data", &missing, "--out", &path(&dir, "o")]);
    assert_eq!(error["error"], "missing_data");
    assert!(error["message"].as_str().unwrap().contains("truth.csv"));

    assert_eq!(fail(&["run", "--data", &missing, "--set", "strategy=ukf"])["error"], "config");
    assert_eq!(fail(&["generate", "--set", "sigma_range=0"])["error"], "config");
    assert_eq!(fail(&["generate", "--set", "triggers=80:999"])["error"], "config");

    let config = dir.path().join("run.cfg");
    fs::write(&config, "# comment\nstrategy = dp\nnot a pair\n").unwrap();
    let error = fail(&["generate", "--config", config.to_str().unwrap()]);
    assert!(error["message"].as_str().unwrap().starts_with("line 3"), "{error}");

    let data = dataset(&dir, &[]);
    let error = fail(&["run", "--data", &data, "--out", &path(&dir, "r"), "--set", "tags=100:0.2,0,0.05"]);
    assert_eq!(error["error"], "config");
    assert!(error["message"].as_str().unwrap().contains("105"), "{error}");

    let unwritable = dir.path().join("file");
    fs::write(&unwritable, "").unwrap();
    let error = fail(&["generate", "--out", unwritable.to_str().unwrap()]);
    assert_eq!(error["error"], "io");
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.cfg");
    let data = path(&dir, "from-config");
    fs::write(&config, format!("seeds = 1..3\noutput = {data}\nstrategy = dah # trailing comment\n")).unwrap();
    succeed(&["generate", "--config", config.to_str().unwrap(), "--set", "seeds=2"]);
    assert!(!Path::new(&data).join("seed_1").exists());
    assert!(Path::new(&data).join("seed_2/imu.csv").is_file());
    let keys = succeed(&["config-keys"]);
    assert!(keys.lines().any(|l| l.starts_with("calibration_poses")));
}
