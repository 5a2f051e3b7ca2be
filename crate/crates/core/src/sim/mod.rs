//! Synthetic datasets and evaluation.

mod dataset;
pub mod jet;
mod metrics;
mod ranges;
mod scenario;
mod synth;
mod trajectory;

use thiserror::Error;

pub use dataset::{
    default_anchor_positions, default_tag_lever_arms, generate_dataset, Dataset, DatasetConfig, BARO_ID, IMU_ID,
    KNOWN_ANCHOR_IDS, TAG_IDS, UNKNOWN_ANCHOR_IDS,
};
pub use metrics::{
    average_nees_interval, chi2_quantile, compute_nees, nees_bound_3dof, orientation_error_deg, rms, rmse,
};
pub use ranges::{evaluate_ranges, Histogram, PairStats, RangeEvalConfig, RangeEvaluation};
pub use scenario::{
    run_scenario, AnchorCalibration, AnchorFailure, AnchorReport, ErrorReport, ImuPrior, ScenarioConfig, TimingSample, UpdateKind,
};
pub use synth::{synthesize_baro, synthesize_imu, ImuSynthesis};
pub use trajectory::{GroundTruth, SpiralTrajectory, TrajectorySpec, TruthSample};

use crate::filter::FilterError;
use crate::mesh::MeshError;
use crate::state::StateError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible trajectory: {0}")]
    InfeasibleTrajectory(String),
    #[error("invalid rate {0} Hz")]
    InvalidRate(f64),
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("ground truth timestamps must increase strictly")]
    UnorderedTruth,
    #[error("covariance is singular")]
    SingularCovariance,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    State(#[from] StateError),
}
