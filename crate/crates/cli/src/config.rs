//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so a
//! typo cannot silently fall back to a default. Lists use `;` between entries
//! and `,` inside an entry:
//!
//! ```text
//! strategy = dah
//! seeds = 0..12
//! known_anchors = 101:0,0,0.3; 102:5,0,1.8
//! unknown_anchors = 106:0.3,2.5,1.1; 107
//! triggers = 80:106,107; 100:108,109,110
//! injected_biases = 100-101:0.25,1.0
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;

use meshfuse_core::calib::{CalibrationOptions, RansacOptions};
use meshfuse_core::filter::Strategy;
use meshfuse_core::models::{BaroParams, ImuNoise, RangeBias, RangeBiasTable};
use meshfuse_core::sim::{
    default_anchor_positions, default_tag_lever_arms, DatasetConfig, ImuSynthesis, ScenarioConfig,
    KNOWN_ANCHOR_IDS, UNKNOWN_ANCHOR_IDS,
};
use meshfuse_core::InstanceId;
use nalgebra::Vector3;

use crate::error::CliError;

/// Every accepted key with its meaning, printed by `meshfuse config-keys`.
pub const KEYS: &[(&str, &str)] = &[
    ("strategy", "dp | dah"),
    ("seeds", "comma list or half-open range a..b"),
    ("output", "output directory when --out is not given"),
    ("sigma_range", "range noise 1σ assumed by the estimator and calibration, m (> 0)"),
    ("sigma_position", "tag position 1σ assumed by calibration, m (> 0)"),
    ("sigma_pressure", "barometer noise 1σ, Pa (> 0)"),
    ("accel_noise_density", "m/s²/√Hz (> 0)"),
    ("gyro_noise_density", "rad/s/√Hz (> 0)"),
    ("accel_bias_walk", "m/s³/√Hz (> 0)"),
    ("gyro_bias_walk", "rad/s²/√Hz (> 0)"),
    ("data_sigma_range", "range noise 1σ of generated data, m (>= 0, default sigma_range)"),
    ("outlier_probability", "fraction of generated ranges carrying a positive outlier"),
    ("drop_probability", "fraction of dropped mesh slots"),
    ("slot_duration", "mesh slot length, s"),
    ("injected_biases", "pairwise (γ, β) injected into generated ranges: a-b:γ,β; ..."),
    ("known_biases", "pairwise (γ, β) handed to the estimator: a-b:γ,β; ..."),
    ("tags", "tag lever arms: id:x,y,z; ..."),
    ("known_anchors", "anchors known from the start: id:x,y,z; ..."),
    ("unknown_anchors", "anchors to calibrate, optional true position: id[:x,y,z]; ..."),
    ("triggers", "calibration triggers of the run command: t:id,id; ..."),
    ("ransac", "true | false"),
    ("ransac_outlier_ratio", "expected outlier fraction ε (default outlier_probability)"),
    ("ransac_success_probability", "probability p of drawing an outlier-free sample"),
    ("calibration_poses", "estimated | truth"),
    ("gate_probability", "innovation gate probability or off"),
    ("history_window", "out-of-sequence window, s"),
    ("bin_width", "range-error histogram bin width, m"),
    ("range_gate", "range errors beyond this count as outliers, m"),
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub sigma_range: f64,
    pub sigma_position: f64,
    pub sigma_pressure: f64,
    pub imu_noise: ImuNoise,
    pub data_sigma_range: f64,
    pub outlier_probability: f64,
    pub drop_probability: f64,
    pub slot_duration: f64,
    pub injected_biases: RangeBiasTable,
    pub known_biases: RangeBiasTable,
    pub tags: BTreeMap<InstanceId, Vector3<f64>>,
    pub known_anchors: BTreeMap<InstanceId, Vector3<f64>>,
    /// True positions are optional; without one the anchor's errors are omitted.
    pub unknown_anchors: BTreeMap<InstanceId, Option<Vector3<f64>>>,
    pub triggers: Vec<(f64, Vec<InstanceId>)>,
    pub ransac: bool,
    pub ransac_outlier_ratio: f64,
    pub ransac_success_probability: f64,
    pub calibrate_with_truth: bool,
    pub gate_probability: Option<f64>,
    pub history_window: f64,
    pub bin_width: f64,
    pub range_gate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let evaluation = ScenarioConfig::evaluation(Strategy::Dah, true, 0);
        let anchors = default_anchor_positions();
        Self {
            strategy: evaluation.strategy,
            seeds: vec![0],
            output: PathBuf::from("out"),
            sigma_range: 0.1,
            sigma_position: evaluation.calibration_sigma_position,
            sigma_pressure: BaroParams::default().sigma_pressure,
            imu_noise: ImuNoise::default(),
            data_sigma_range: 0.1,
            outlier_probability: 0.1,
            drop_probability: 0.0,
            slot_duration: 0.01,
            injected_biases: RangeBiasTable::new(),
            known_biases: RangeBiasTable::new(),
            tags: default_tag_lever_arms(),
            known_anchors: KNOWN_ANCHOR_IDS.iter().map(|id| (*id, anchors[id])).collect(),
            unknown_anchors: UNKNOWN_ANCHOR_IDS.iter().map(|id| (*id, Some(anchors[id]))).collect(),
            triggers: evaluation.triggers,
            ransac: true,
            ransac_outlier_ratio: 0.1,
            ransac_success_probability: 0.99,
            calibrate_with_truth: false,
            gate_probability: evaluation.gate_probability,
            history_window: evaluation.history_window,
            bin_width: 0.01,
            range_gate: 5.0,
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key} = {value}: {reason}"))
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| invalid(key, value, e))
}

fn id(key: &str, value: &str) -> Result<InstanceId, CliError> {
    Ok(InstanceId(number(key, value)?))
}

fn entries(value: &str) -> impl Iterator<Item = &str> {
    value.split(';').map(str::trim).filter(|e| !e.is_empty())
}

fn numbers(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|v| number(key, v)).collect()
}

fn vector(key: &str, value: &str) -> Result<Vector3<f64>, CliError> {
    match numbers(key, value)?[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err(invalid(key, value, "expected x,y,z")),
    }
}

fn positions(key: &str, value: &str) -> Result<BTreeMap<InstanceId, Vector3<f64>>, CliError> {
    let mut out = BTreeMap::new();
    for entry in entries(value) {
        let (i, p) = entry.split_once(':').ok_or_else(|| invalid(key, entry, "expected id:x,y,z"))?;
        if out.insert(id(key, i)?, vector(key, p)?).is_some() {
            return Err(invalid(key, entry, "duplicate id"));
        }
    }
    Ok(out)
}

fn optional_positions(key: &str, value: &str) -> Result<BTreeMap<InstanceId, Option<Vector3<f64>>>, CliError> {
    let mut out = BTreeMap::new();
    for entry in entries(value) {
        let (i, p) = match entry.split_once(':') {
            Some((i, p)) => (i, Some(vector(key, p)?)),
            None => (entry, None),
        };
        if out.insert(id(key, i)?, p).is_some() {
            return Err(invalid(key, entry, "duplicate id"));
        }
    }
    Ok(out)
}

fn biases(key: &str, value: &str) -> Result<RangeBiasTable, CliError> {
    let mut table = RangeBiasTable::new();
    for entry in entries(value) {
        let (pair, params) = entry.split_once(':').ok_or_else(|| invalid(key, entry, "expected a-b:γ,β"))?;
        let (a, b) = pair.split_once('-').ok_or_else(|| invalid(key, entry, "expected a-b:γ,β"))?;
        let [gamma, beta] = numbers(key, params)?[..] else {
            return Err(invalid(key, entry, "expected a-b:γ,β"));
        };
        let bias = RangeBias::new(gamma, beta).map_err(|e| invalid(key, entry, e))?;
        table.insert(id(key, a)?, id(key, b)?, bias).map_err(|e| invalid(key, entry, e))?;
    }
    Ok(table)
}

fn triggers(key: &str, value: &str) -> Result<Vec<(f64, Vec<InstanceId>)>, CliError> {
    let mut out = Vec::new();
    for entry in entries(value) {
        let (t, ids) = entry.split_once(':').ok_or_else(|| invalid(key, entry, "expected t:id,id"))?;
        let ids = ids.split(',').map(|i| id(key, i)).collect::<Result<Vec<_>, _>>()?;
        out.push((number(key, t)?, ids));
    }
    Ok(out)
}

fn seeds(key: &str, value: &str) -> Result<Vec<u64>, CliError> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (number(key, a)?, number(key, b)?);
        return Ok((a..b).collect());
    }
    value.split(',').map(|v| number(key, v)).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(invalid(key, other, "expected true or false")),
    }
}

impl RunConfig {
    /// Parses a configuration file on top of the defaults, then applies
    /// `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = Self::default();
        let mut explicit = BTreeSet::new();
        let mut apply = |config: &mut Self, origin: String, line: &str| -> Result<(), CliError> {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}: expected key = value, got '{line}'")))?;
            let key = key.trim();
            config.set(key, value.trim()).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{origin}: {m}")),
                other => other,
            })?;
            explicit.insert(key.to_string());
            Ok(())
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                apply(&mut config, format!("line {}", n + 1), line)?;
            }
        }
        for o in overrides {
            apply(&mut config, "--set".to_string(), o)?;
        }
        if !explicit.contains("data_sigma_range") && explicit.contains("sigma_range") {
            config.data_sigma_range = config.sigma_range;
        }
        if !explicit.contains("ransac_outlier_ratio") && explicit.contains("outlier_probability") {
            config.ransac_outlier_ratio = config.outlier_probability;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "strategy" => self.strategy = value.parse().map_err(|e: String| invalid(key, value, e))?,
            "seeds" => self.seeds = seeds(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "sigma_range" => self.sigma_range = number(key, value)?,
            "sigma_position" => self.sigma_position = number(key, value)?,
            "sigma_pressure" => self.sigma_pressure = number(key, value)?,
            "accel_noise_density" => self.imu_noise.accel_noise_density = number(key, value)?,
            "gyro_noise_density" => self.imu_noise.gyro_noise_density = number(key, value)?,
            "accel_bias_walk" => self.imu_noise.accel_bias_walk = number(key, value)?,
            "gyro_bias_walk" => self.imu_noise.gyro_bias_walk = number(key, value)?,
            "data_sigma_range" => self.data_sigma_range = number(key, value)?,
            "outlier_probability" => self.outlier_probability = number(key, value)?,
            "drop_probability" => self.drop_probability = number(key, value)?,
            "slot_duration" => self.slot_duration = number(key, value)?,
            "injected_biases" => self.injected_biases = biases(key, value)?,
            "known_biases" => self.known_biases = biases(key, value)?,
            "tags" => self.tags = positions(key, value)?,
            "known_anchors" => self.known_anchors = positions(key, value)?,
            "unknown_anchors" => self.unknown_anchors = optional_positions(key, value)?,
            "triggers" => self.triggers = triggers(key, value)?,
            "ransac" => self.ransac = boolean(key, value)?,
            "ransac_outlier_ratio" => self.ransac_outlier_ratio = number(key, value)?,
            "ransac_success_probability" => self.ransac_success_probability = number(key, value)?,
            "calibration_poses" => {
                self.calibrate_with_truth = match value {
                    "truth" => true,
                    "estimated" => false,
                    other => return Err(invalid(key, other, "expected estimated or truth")),
                }
            }
            "gate_probability" => {
                self.gate_probability = if value == "off" { None } else { Some(number(key, value)?) }
            }
            "history_window" => self.history_window = number(key, value)?,
            "bin_width" => self.bin_width = number(key, value)?,
            "range_gate" => self.range_gate = number(key, value)?,
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        for (key, v) in [
            ("sigma_range", self.sigma_range),
            ("sigma_position", self.sigma_position),
            ("sigma_pressure", self.sigma_pressure),
            ("accel_noise_density", self.imu_noise.accel_noise_density),
            ("gyro_noise_density", self.imu_noise.gyro_noise_density),
            ("accel_bias_walk", self.imu_noise.accel_bias_walk),
            ("gyro_bias_walk", self.imu_noise.gyro_bias_walk),
            ("slot_duration", self.slot_duration),
            ("history_window", self.history_window),
            ("bin_width", self.bin_width),
            ("range_gate", self.range_gate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{key} must be positive, got {v}"));
            }
        }
        if !(self.data_sigma_range >= 0.0) {
            return fail(format!("data_sigma_range must be non-negative, got {}", self.data_sigma_range));
        }
        for (key, v) in [
            ("outlier_probability", self.outlier_probability),
            ("drop_probability", self.drop_probability),
            ("ransac_outlier_ratio", self.ransac_outlier_ratio),
        ] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{key} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.ransac_success_probability > 0.0 && self.ransac_success_probability < 1.0) {
            return fail(format!("ransac_success_probability must lie in (0, 1), got {}", self.ransac_success_probability));
        }
        if let Some(g) = self.gate_probability {
            if !(g > 0.0 && g < 1.0) {
                return fail(format!("gate_probability must lie in (0, 1), got {g}"));
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        let ids = self.tags.keys().chain(self.known_anchors.keys()).chain(self.unknown_anchors.keys());
        for id in ids {
            if !seen.insert(*id) {
                return fail(format!("id {id} is assigned more than once"));
            }
        }
        for (t, ids) in &self.triggers {
            for id in ids {
                if !self.unknown_anchors.contains_key(id) {
                    return fail(format!("trigger at {t} s names {id}, which is not an unknown anchor"));
                }
            }
        }
        for (table, key) in [(&self.injected_biases, "injected_biases"), (&self.known_biases, "known_biases")] {
            for (a, b, _) in table.iter() {
                if !seen.contains(&a) || !seen.contains(&b) {
                    return fail(format!("{key} names pair {a}-{b} with an undeclared id"));
                }
            }
        }
        Ok(())
    }

    /// True anchor positions that are known, both known and unknown anchors.
    pub fn anchor_truth(&self) -> BTreeMap<InstanceId, Vector3<f64>> {
        let unknown = self.unknown_anchors.iter().filter_map(|(id, p)| p.map(|p| (*id, p)));
        self.known_anchors.iter().map(|(id, p)| (*id, *p)).chain(unknown).collect()
    }

    pub fn dataset(&self, seed: u64) -> Result<DatasetConfig, CliError> {
        if let Some((id, _)) = self.unknown_anchors.iter().find(|(_, p)| p.is_none()) {
            return Err(CliError::Config(format!("generating data needs a true position for anchor {id}")));
        }
        let defaults = DatasetConfig::default();
        Ok(DatasetConfig {
            seed,
            imu: ImuSynthesis { noise: self.imu_noise, ..defaults.imu },
            baro: BaroParams { sigma_pressure: self.sigma_pressure, ..defaults.baro },
            tags: self.tags.clone(),
            anchors: self.anchor_truth(),
            slot_duration: self.slot_duration,
            drop_probability: self.drop_probability,
            sigma_range: self.data_sigma_range,
            outlier_probability: self.outlier_probability,
            biases: self.injected_biases.clone(),
            ..defaults
        })
    }

    pub fn scenario(&self, seed: u64) -> ScenarioConfig {
        let defaults = ScenarioConfig::evaluation(self.strategy, self.ransac, seed);
        let ransac = RansacOptions {
            success_probability: self.ransac_success_probability,
            ..RansacOptions::new(self.ransac_outlier_ratio, self.sigma_range, self.sigma_position)
        };
        ScenarioConfig {
            history_window: self.history_window,
            gate_probability: self.gate_probability,
            imu_noise: self.imu_noise,
            baro: defaults.baro.map(|b| BaroParams { sigma_pressure: self.sigma_pressure, ..b }),
            tags: self.tags.clone(),
            known_anchors: self.known_anchors.clone(),
            biases: self.known_biases.clone(),
            sigma_range: self.sigma_range,
            triggers: self.triggers.clone(),
            calibration: CalibrationOptions { ransac: self.ransac.then_some(ransac), ..defaults.calibration.clone() },
            calibration_sigma_position: self.sigma_position,
            calibrate_with_truth: self.calibrate_with_truth,
            ..defaults
        }
    }
}
