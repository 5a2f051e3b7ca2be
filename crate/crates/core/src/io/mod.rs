//! CSV and JSON file formats.
//!
//! Every CSV has a mandatory header row and uses `.` as decimal separator.
//! Floats are written in shortest round-trip form, so reading a file and
//! writing it again reproduces it byte for byte.

use std::io::{Read, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::AnchorHandover;
use crate::mesh::RangeSample;
use crate::models::ImuReading;
use crate::sim::{ErrorReport, TimingSample};
use crate::state::{InstanceId, Pose};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid record {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    ax: f64,
    ay: f64,
    az: f64,
    wx: f64,
    wy: f64,
    wz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaroRow {
    t: f64,
    pressure: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RangeRow {
    t: f64,
    id_initiator: u32,
    id_responder: u32,
    range: f64,
}

#[derive(Debug, Serialize)]
struct TimingRow {
    t: f64,
    kind: &'static str,
    seconds: f64,
    instances: usize,
}

fn write_rows<W: Write, R: Serialize>(writer: W, rows: impl IntoIterator<Item = R>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>, IoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

fn check_finite(row: usize, values: &[f64]) -> Result<(), IoError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(IoError::Invalid { row, reason: "non-finite value".into() })
    }
}

pub fn write_poses<W: Write>(writer: W, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    write_rows(
        writer,
        poses.iter().map(|(t, p)| {
            let q = p.orientation.quaternion();
            PoseRow {
                t: *t,
                px: p.position.x,
                py: p.position.y,
                pz: p.position.z,
                qw: q.w,
                qx: q.i,
                qy: q.j,
                qz: q.k,
            }
        }),
    )
}

/// Quaternions are taken as stored; their norm must be within 1e-6 of one.
pub fn read_poses<R: Read>(reader: R) -> Result<Vec<(f64, Pose)>, IoError> {
    let rows: Vec<PoseRow> = read_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            check_finite(k, &[r.t, r.px, r.py, r.pz, r.qw, r.qx, r.qy, r.qz])?;
            let q = Quaternion::new(r.qw, r.qx, r.qy, r.qz);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(IoError::Invalid { row: k, reason: format!("quaternion norm {}", q.norm()) });
            }
            let pose = Pose::new(Vector3::new(r.px, r.py, r.pz), UnitQuaternion::new_unchecked(q));
            Ok((r.t, pose))
        })
        .collect()
}

pub fn write_imu<W: Write>(writer: W, readings: &[ImuReading]) -> Result<(), IoError> {
    write_rows(
        writer,
        readings.iter().map(|r| ImuRow {
            t: r.t,
            ax: r.accel.x,
            ay: r.accel.y,
            az: r.accel.z,
            wx: r.gyro.x,
            wy: r.gyro.y,
            wz: r.gyro.z,
        }),
    )
}

pub fn read_imu<R: Read>(reader: R) -> Result<Vec<ImuReading>, IoError> {
    let rows: Vec<ImuRow> = read_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            check_finite(k, &[r.t, r.ax, r.ay, r.az, r.wx, r.wy, r.wz])?;
            Ok(ImuReading::new(r.t, Vector3::new(r.ax, r.ay, r.az), Vector3::new(r.wx, r.wy, r.wz)))
        })
        .collect()
}

pub fn write_baro<W: Write>(writer: W, readings: &[(f64, f64)]) -> Result<(), IoError> {
    write_rows(writer, readings.iter().map(|&(t, pressure)| BaroRow { t, pressure }))
}

pub fn read_baro<R: Read>(reader: R) -> Result<Vec<(f64, f64)>, IoError> {
    let rows: Vec<BaroRow> = read_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            check_finite(k, &[r.t, r.pressure])?;
            Ok((r.t, r.pressure))
        })
        .collect()
}

pub fn write_ranges<W: Write>(writer: W, samples: &[RangeSample]) -> Result<(), IoError> {
    write_rows(
        writer,
        samples.iter().map(|s| RangeRow {
            t: s.t,
            id_initiator: s.initiator.0,
            id_responder: s.responder.0,
            range: s.range,
        }),
    )
}

pub fn read_ranges<R: Read>(reader: R) -> Result<Vec<RangeSample>, IoError> {
    let rows: Vec<RangeRow> = read_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            check_finite(k, &[r.t, r.range])?;
            if r.id_initiator == r.id_responder || r.id_initiator == 0 || r.id_responder == 0 {
                return Err(IoError::Invalid { row: k, reason: "invalid device pair".into() });
            }
            Ok(RangeSample {
                t: r.t,
                initiator: InstanceId(r.id_initiator),
                responder: InstanceId(r.id_responder),
                range: r.range,
            })
        })
        .collect()
}

pub fn write_timing<W: Write>(writer: W, timing: &[TimingSample]) -> Result<(), IoError> {
    write_rows(
        writer,
        timing.iter().map(|s| TimingRow {
            t: s.t,
            kind: match s.kind {
                crate::sim::UpdateKind::Range => "range",
                crate::sim::UpdateKind::Pressure => "pressure",
                crate::sim::UpdateKind::ZeroVelocity => "zero_velocity",
            },
            seconds: s.seconds,
            instances: s.instances,
        }),
    )
}

pub fn write_handovers<W: Write>(writer: W, handovers: &[AnchorHandover]) -> Result<(), IoError> {
    serde_json::to_writer_pretty(writer, handovers)?;
    Ok(())
}

pub fn read_handovers<R: Read>(reader: R) -> Result<Vec<AnchorHandover>, IoError> {
    Ok(serde_json::from_reader(reader)?)
}

/// JSON form of an [`ErrorReport`] without the per-sample series.
#[derive(Debug, Serialize)]
pub struct ReportSummary<'a> {
    pub strategy: String,
    pub position_rmse: f64,
    pub orientation_rmse_deg: f64,
    pub mean_initial_anchor_error: Option<f64>,
    pub mean_final_anchor_error: Option<f64>,
    pub anchors: &'a [crate::sim::AnchorReport],
    pub failed: &'a [crate::sim::AnchorFailure],
    pub mean_position_nees: Option<f64>,
    pub updates_applied: usize,
    pub updates_rejected: usize,
    pub updates_gated: usize,
}

impl<'a> ReportSummary<'a> {
    pub fn new(report: &'a ErrorReport) -> Self {
        let nees: Vec<f64> = report.nees.iter().map(|(_, v)| *v).collect();
        let d = report.diagnostics;
        Self {
            strategy: report.strategy.to_string(),
            position_rmse: report.position_rmse,
            orientation_rmse_deg: report.orientation_rmse_deg,
            mean_initial_anchor_error: report.mean_initial_anchor_error(),
            mean_final_anchor_error: report.mean_final_anchor_error(),
            anchors: &report.anchors,
            failed: &report.failed,
            mean_position_nees: (!nees.is_empty()).then(|| nees.iter().sum::<f64>() / nees.len() as f64),
            updates_applied: d.applied,
            updates_rejected: d.rejected,
            updates_gated: d.gated,
        }
    }
}

pub fn write_report<W: Write>(writer: W, report: &ErrorReport) -> Result<(), IoError> {
    serde_json::to_writer_pretty(writer, &ReportSummary::new(report))?;
    Ok(())
}
