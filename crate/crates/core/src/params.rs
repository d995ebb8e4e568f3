//! Physical constants of the vehicle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter `{name}` must be {rule}, got {value}")]
    OutOfRange {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("servo axis height h1 = {h1} must be below the wheel radius r = {r}")]
    ServoAboveAxle { h1: f64, r: f64 },
}

/// Mass, geometry, friction and rotor constants.
///
/// Lengths in metres, masses in kilograms, forces in newtons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Total mass.
    pub mass: f64,
    /// Mass of a single wheel.
    pub wheel_mass: f64,
    /// Principal moments of inertia (diagonal of J).
    pub inertia: [f64; 3],
    /// Arm length l from the CoM to each rotor along body x.
    pub arm_length: f64,
    /// Vertical distance h1 from the servo axis to the CoM.
    pub servo_height: f64,
    /// Lever arm h2 of the gravity pitch term on the ground.
    pub axle_offset: f64,
    /// Wheel radius r; also the CoM height while rolling.
    pub wheel_radius: f64,
    /// Lateral distance W from each wheel to the CoM.
    pub wheel_offset: f64,
    /// Rolling friction coefficient.
    pub rolling_friction: f64,
    /// Lateral (sticking) friction coefficient.
    pub lateral_friction: f64,
    /// Thrust coefficient c_t [N s^2].
    pub thrust_coeff: f64,
    /// Rotor drag torque coefficient c_q [N m s^2].
    pub torque_coeff: f64,
    pub gravity: f64,
    /// Per-rotor thrust cap.
    pub thrust_max: f64,
    /// Servo travel on either side of zero [rad].
    pub tilt_max: f64,
    pub air_density: f64,
    /// Rotor disk area [m^2].
    pub disk_area: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.83,
            wheel_mass: 0.09,
            inertia: [4.1e-3, 2.8e-3, 3.5e-3],
            arm_length: 0.07,
            servo_height: 0.04,
            axle_offset: 0.02,
            wheel_radius: 0.15,
            wheel_offset: 0.09,
            rolling_friction: 0.01,
            lateral_friction: 1.0,
            thrust_coeff: 1.75e-8,
            torque_coeff: 1.75e-10,
            gravity: 9.81,
            thrust_max: 8.0,
            tilt_max: std::f64::consts::FRAC_PI_4,
            air_density: 1.225,
            disk_area: std::f64::consts::PI * 0.0635 * 0.0635,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("mass", self.mass),
            ("wheel_mass", self.wheel_mass),
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("arm_length", self.arm_length),
            ("servo_height", self.servo_height),
            ("axle_offset", self.axle_offset),
            ("wheel_radius", self.wheel_radius),
            ("wheel_offset", self.wheel_offset),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
            ("gravity", self.gravity),
            ("thrust_max", self.thrust_max),
            ("tilt_max", self.tilt_max),
            ("air_density", self.air_density),
            ("disk_area", self.disk_area),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ParamError::OutOfRange {
                    name,
                    rule: "finite and > 0",
                    value,
                });
            }
        }
        for (name, value) in [
            ("rolling_friction", self.rolling_friction),
            ("lateral_friction", self.lateral_friction),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::OutOfRange {
                    name,
                    rule: "finite and >= 0",
                    value,
                });
            }
        }
        if 2.0 * self.wheel_mass >= self.mass {
            return Err(ParamError::OutOfRange {
                name: "wheel_mass",
                rule: "less than half the total mass",
                value: self.wheel_mass,
            });
        }
        if self.tilt_max >= std::f64::consts::FRAC_PI_2 {
            return Err(ParamError::OutOfRange {
                name: "tilt_max",
                rule: "below pi/2",
                value: self.tilt_max,
            });
        }
        if self.servo_height >= self.wheel_radius {
            return Err(ParamError::ServoAboveAxle {
                h1: self.servo_height,
                r: self.wheel_radius,
            });
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.inertia))
    }

    pub fn inertia_vec(&self) -> Vec3 {
        Vec3::from(self.inertia)
    }

    /// Height of the CoM above the ground while both wheels touch it.
    pub fn contact_height(&self) -> f64 {
        self.wheel_radius
    }

    /// Per-rotor thrust that holds a level hover.
    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.weight()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        VehicleParams::default().validate().unwrap();
    }

    #[test]
    fn default_disk_area_matches_five_inch_prop() {
        let p = VehicleParams::default();
        assert!((p.disk_area - 0.012668).abs() < 1e-6);
        assert!((p.torque_coeff / p.thrust_coeff - 0.01).abs() < 1e-12);
    }

    #[test]
    fn negative_mass_rejected() {
        let p = VehicleParams {
            mass: -0.1,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ParamError::OutOfRange { name: "mass", .. })
        ));
    }

    #[test]
    fn negative_friction_rejected_but_zero_allowed() {
        let mut p = VehicleParams {
            rolling_friction: 0.0,
            lateral_friction: 0.0,
            ..Default::default()
        };
        p.validate().unwrap();
        p.lateral_friction = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn servo_axis_must_sit_below_axle() {
        let p = VehicleParams {
            servo_height: 0.2,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ParamError::ServoAboveAxle { .. })));
    }
}
