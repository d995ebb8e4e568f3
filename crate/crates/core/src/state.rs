//! State, input and locomotion mode.

use nalgebra::{Quaternion, SVector, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::VehicleParams;
use crate::rotation::Orientation;
use crate::Vec3;

/// Flat state vector layout: p (0..3), v (3..6), q as w,x,y,z (6..10), ω (10..13).
pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    /// World-frame position.
    pub position: Vec3,
    /// World-frame velocity.
    pub velocity: Vec3,
    pub orientation: Orientation,
    /// Body-frame angular rate.
    pub omega: Vec3,
}

impl RobotState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            orientation: crate::rotation::euler_to_orientation(0.0, 0.0, yaw),
            omega: Vec3::zeros(),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let q = self.orientation.wxyz();
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        for i in 0..4 {
            x[6 + i] = q[i];
        }
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }

    /// Rebuilds a state; the quaternion block is normalized.
    pub fn from_vector(x: &StateVector) -> Self {
        let q = Quaternion::new(x[6], x[7], x[8], x[9]);
        Self {
            position: x.fixed_rows::<3>(0).into_owned(),
            velocity: x.fixed_rows::<3>(3).into_owned(),
            orientation: Orientation::from_unit(UnitQuaternion::new_normalize(q)),
            omega: x.fixed_rows::<3>(10).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_vector().amax()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("thrust T{index} = {value} N outside [0, {max}]")]
    Thrust { index: usize, value: f64, max: f64 },
    #[error("tilt delta{index} = {value} rad outside [-{max}, {max}]")]
    Tilt { index: usize, value: f64, max: f64 },
}

/// Rotor thrusts and servo tilts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust1: f64,
    pub thrust2: f64,
    pub tilt1: f64,
    pub tilt2: f64,
}

impl ControlInput {
    pub fn new(thrust1: f64, thrust2: f64, tilt1: f64, tilt2: f64) -> Self {
        Self {
            thrust1,
            thrust2,
            tilt1,
            tilt2,
        }
    }

    pub fn hover(params: &VehicleParams) -> Self {
        let t = params.hover_thrust();
        Self::new(t, t, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.thrust1, self.thrust2, self.tilt1, self.tilt2)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self::new(u[0], u[1], u[2], u[3])
    }

    pub fn lower_bound(params: &VehicleParams) -> Self {
        Self::new(0.0, 0.0, -params.tilt_max, -params.tilt_max)
    }

    pub fn upper_bound(params: &VehicleParams) -> Self {
        Self::new(
            params.thrust_max,
            params.thrust_max,
            params.tilt_max,
            params.tilt_max,
        )
    }

    pub fn check_bounds(&self, params: &VehicleParams) -> Result<(), InputError> {
        // Slack for round-off in inputs recovered by inversion.
        const TOL: f64 = 1e-9;
        for (index, value) in [(1, self.thrust1), (2, self.thrust2)] {
            if !(value >= -TOL && value <= params.thrust_max + TOL) {
                return Err(InputError::Thrust {
                    index,
                    value,
                    max: params.thrust_max,
                });
            }
        }
        for (index, value) in [(1, self.tilt1), (2, self.tilt2)] {
            if !(value.abs() <= params.tilt_max + TOL) {
                return Err(InputError::Tilt {
                    index,
                    value,
                    max: params.tilt_max,
                });
            }
        }
        Ok(())
    }

    pub fn clamped(&self, params: &VehicleParams) -> Self {
        let lo = Self::lower_bound(params).to_vector();
        let hi = Self::upper_bound(params).to_vector();
        let u = self.to_vector();
        Self::from_vector(&u.zip_zip_map(&lo, &hi, |x, l, h| x.clamp(l, h)))
    }
}

/// Commanded travel direction on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    /// The direction flag: +1 forward, -1 reverse.
    pub fn alpha(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Aerial,
    Ground(Direction),
}

impl Mode {
    /// Switch scalar multiplying the ground interaction terms.
    pub fn switch(self) -> f64 {
        match self {
            Mode::Aerial => 0.0,
            Mode::Ground(_) => 1.0,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self, Mode::Ground(_))
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Mode::Aerial => None,
            Mode::Ground(d) => Some(d),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Aerial => "aerial",
            Mode::Ground(Direction::Forward) => "ground",
            Mode::Ground(Direction::Reverse) => "ground_reverse",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::euler_to_orientation;

    #[test]
    fn vector_round_trip() {
        let s = RobotState {
            position: Vec3::new(1.0, -2.0, 0.5),
            velocity: Vec3::new(0.1, 0.2, -0.3),
            orientation: euler_to_orientation(0.1, -0.2, 1.3),
            omega: Vec3::new(0.4, -0.5, 0.6),
        };
        let back = RobotState::from_vector(&s.to_vector());
        assert!((back.to_vector() - s.to_vector()).norm() < 1e-15);
    }

    #[test]
    fn mode_switch_scalar() {
        assert_eq!(Mode::Aerial.switch(), 0.0);
        assert_eq!(Mode::Ground(Direction::Forward).switch(), 1.0);
        assert_eq!(Mode::Ground(Direction::Reverse).switch(), 1.0);
        assert_eq!(Direction::Reverse.alpha(), -1.0);
    }

    #[test]
    fn input_bounds() {
        let p = VehicleParams::default();
        ControlInput::hover(&p).check_bounds(&p).unwrap();
        assert!(matches!(
            ControlInput::new(9.0, 1.0, 0.0, 0.0).check_bounds(&p),
            Err(InputError::Thrust { index: 1, .. })
        ));
        assert!(matches!(
            ControlInput::new(1.0, 1.0, 0.0, -1.0).check_bounds(&p),
            Err(InputError::Tilt { index: 2, .. })
        ));
        let c = ControlInput::new(-1.0, 9.0, 2.0, -2.0).clamped(&p);
        c.check_bounds(&p).unwrap();
        assert_eq!(c.thrust2, p.thrust_max);
    }
}
