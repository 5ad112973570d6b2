//! Adaptive estimation of vehicle sideslip, road bank and lateral accelerometer
//! bias.
//!
//! Two Kalman observers run side by side. The dynamics observer uses a bicycle
//! model with linear tires and estimates `[v_y, r, sin φ, d]`. The kinematics
//! observer integrates the accelerometers and is only informative while the
//! vehicle is turning. When the yaw rate is large enough the kinematic lateral
//! velocity drives a recursive regularized least-squares estimate of the front
//! and rear cornering stiffness, which is handed back to the dynamics observer.
//!
//! The crate also ships a planar vehicle simulator, a stability diagnostics
//! recorder for the adaptation loop, and a file-based run harness.

pub mod adaptation;
pub mod diagnostics;
pub mod ekf;
pub mod harness;
pub mod error;
pub mod model;
pub mod observers;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
pub use model::{SensorSample, VehicleParams};
