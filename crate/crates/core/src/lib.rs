//! Simulation and control toolkit for a bi-modal (aerial/ground) bi-copter
//! with two passive wheels.
//!
//! The crate is organised bottom-up:
//!
//! - [`rotation`], [`state`], [`params`]: shared domain types and rotation algebra.
//! - [`dynamics`]: the unified aerial/ground model, ground reaction forces,
//!   slip detection, RK4 integration and the hybrid plant simulator.
//! - [`flatness`]: flat-output to state/input maps for both locomotion modes.
//! - [`trajectory`]: closed-form flat trajectories and reference sampling.
//! - [`nmpc`]: the receding-horizon tracking controller and closed-loop runner.
//! - [`analysis`]: design-space calculators and experiment metrics.

pub mod analysis;
pub mod dynamics;
pub mod flatness;
mod jet;
pub mod nmpc;
pub mod params;
pub mod rotation;
pub mod state;
pub mod trajectory;

/// 3-vector used for positions, velocities, forces and torques.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use params::VehicleParams;
pub use rotation::{EulerAngles, Orientation};
pub use state::{ControlInput, Direction, Mode, RobotState};
