//! Modular aided-inertial state estimation for meshed UWB ranging.
//!
//! The crate is organised bottom-up:
//!
//! - [`state`]: rotations, poses, beliefs, factorized cross-covariances and
//!   sliding-window histories.
//! - [`models`]: IMU propagation and the barometer, range and zero-velocity
//!   observation models.
//! - [`filter`]: the instance handler running the decoupled-propagation (DP)
//!   and decoupled-approximated (DAH) fusion strategies with out-of-sequence
//!   replay.
//! - [`mesh`]: the fully-meshed SDS-TWR TDMA schedule and range simulator.
//! - [`calib`]: fly-by anchor position and pairwise-bias calibration.
//! - [`sim`]: synthetic datasets, range evaluation, metrics and scenarios.
//! - [`io`]: CSV and JSON file formats.

pub mod calib;
pub mod filter;
pub mod io;
pub mod mesh;
pub mod models;
pub mod sim;
pub mod state;

pub use state::InstanceId;
