//! Barometric altimetry and altitude-constrained point-to-plane ICP.
//!
//! The crate is split along the processing chain:
//!
//! * [`barometry`]: temperature-compensation polynomials for MEMS pressure
//!   sensors and a scalar Kalman smoother for calibrated streams.
//! * [`altimetry`]: differential pressure altitude between a static base
//!   station and a moving rover.
//! * [`pointcloud`]: clouds with normals, gravity alignment and kd-tree
//!   correspondence search.
//! * [`registration`]: 6-DOF, gravity-constrained 4-DOF and the
//!   altitude-constrained 3-DOF point-to-plane ICP.
//! * [`simulation`]: deterministic synthetic worlds, scans, barometers and
//!   drifting odometry.
//! * [`evaluation`]: the vertical relative pose error and the end-to-end
//!   mode comparison.
//! * [`io`]: the text file formats shared with the command-line tool.

pub mod altimetry;
pub mod barometry;
mod error;
pub mod evaluation;
pub mod io;
pub mod pointcloud;
pub mod registration;
pub mod simulation;

pub use error::{Error, Result};

/// A 3-vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// A 3x3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
