//! Flat outputs to reference state and input, for rolling and flight.
//!
//! On the ground the flat output is the position plus the vertical body
//! thrust; in the air it is the position plus yaw. Both transforms consume
//! analytic derivatives up to fourth order and return the reference state,
//! the feed-forward input and the analytic state derivative.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::dynamics::{centripetal_accel, StateDerivative, SPEED_EPS};
use crate::jet::{Jet, JetQuat, JetVec3};
use crate::params::VehicleParams;
use crate::rotation::Orientation;
use crate::state::{ControlInput, Direction, InputError, Mode, RobotState};
use crate::Vec3;

/// Minimum specific thrust magnitude for the aerial transform [m/s^2].
pub const FREE_FALL_EPS: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlatnessError {
    #[error("t = {t:.4} s: pitch equation out of domain (sine argument {argument:.6})")]
    PitchDomain { t: f64, argument: f64 },
    #[error("t = {t:.4} s: ground normal force {normal:.6} N is negative")]
    ContactLoss { t: f64, normal: f64 },
    #[error("t = {t:.4} s: wheel lift-off (left {left:.6} N, right {right:.6} N)")]
    WheelLiftOff { t: f64, left: f64, right: f64 },
    #[error("t = {t:.4} s: commanded acceleration cancels gravity (free fall)")]
    FreeFall { t: f64 },
    #[error("t = {t:.4} s: vertical thrust {thrust:.6} N must lie in (0, mg)")]
    GroundThrust { t: f64, thrust: f64 },
    #[error("t = {t:.4} s: {source}")]
    InputBounds { t: f64, source: InputError },
}

impl FlatnessError {
    pub fn time(&self) -> f64 {
        match *self {
            FlatnessError::PitchDomain { t, .. }
            | FlatnessError::ContactLoss { t, .. }
            | FlatnessError::WheelLiftOff { t, .. }
            | FlatnessError::FreeFall { t }
            | FlatnessError::GroundThrust { t, .. }
            | FlatnessError::InputBounds { t, .. } => t,
        }
    }
}

/// Ground flat output at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSampleGround {
    pub t: f64,
    /// Position and its first four time derivatives.
    pub derivs: [Vec3; 5],
    /// Vertical body thrust and its first two time derivatives.
    pub thrust_z: [f64; 3],
    pub direction: Direction,
    /// Yaw used below [`SPEED_EPS`] and as the unwrapping anchor.
    pub yaw_hint: Option<f64>,
}

/// Aerial flat output at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSampleAerial {
    pub t: f64,
    pub derivs: [Vec3; 5],
    /// Yaw and its first two time derivatives.
    pub yaw: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReferenceFlags {
    /// Speed too low to define a heading; yaw was held.
    pub yaw_held: bool,
    /// Input clamped to the actuator limits.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub t: f64,
    pub state: RobotState,
    pub input: ControlInput,
    pub mode: Mode,
    /// Analytic time derivative of `state` along the flat trajectory.
    pub state_rate: StateDerivative,
    /// Implied per-wheel normals `(left, right)` in ground mode.
    pub wheel_normals: Option<(f64, f64)>,
    /// Collective vertical body thrust.
    pub thrust_z: f64,
    /// Lateral body thrust recovered by the input solve.
    pub thrust_y: f64,
    pub flags: ReferenceFlags,
}

/// Yaw from the planar velocity direction, negated for reverse travel.
pub fn ground_yaw(velocity: &Vec3, direction: Direction) -> Option<f64> {
    if velocity.xy().norm() < SPEED_EPS {
        return None;
    }
    Some(direction.alpha() * velocity.y.atan2(velocity.x))
}

/// Heading that keeps the body x axis along the velocity when moving
/// forward and against it when reversing.
pub fn travel_heading(velocity: &Vec3, direction: Direction) -> Option<f64> {
    if velocity.xy().norm() < SPEED_EPS {
        return None;
    }
    let a = direction.alpha();
    Some((a * velocity.y).atan2(a * velocity.x))
}

/// Ground pitch that produces the longitudinal acceleration at thrust `thrust_z`.
pub fn ground_pitch(
    accel: &Vec3,
    yaw: f64,
    thrust_z: f64,
    direction: Direction,
    params: &VehicleParams,
) -> Result<f64, FlatnessError> {
    let pitch = pitch_jet(
        Jet::constant(accel.x * yaw.cos() + accel.y * yaw.sin()),
        Jet::constant(thrust_z),
        direction,
        params,
        f64::NAN,
    )?;
    Ok(pitch.v)
}

fn pitch_jet(
    a_long: Jet,
    thrust: Jet,
    direction: Direction,
    params: &VehicleParams,
    t: f64,
) -> Result<Jet, FlatnessError> {
    let m = params.mass;
    let mu = direction.alpha() * params.rolling_friction;
    let argument =
        (a_long * m + mu * m * params.gravity) / thrust.scale((1.0 + mu * mu).sqrt());
    if !(argument.v.abs() < 1.0) {
        return Err(FlatnessError::PitchDomain {
            t,
            argument: argument.v,
        });
    }
    Ok(argument.asin() - mu.atan())
}

/// World-frame angular velocity of a roll-free attitude `Rz(yaw) Ry(pitch)`.
pub fn ground_world_rates(pitch_rate: f64, yaw: f64, yaw_rate: f64) -> Vec3 {
    Vec3::new(-pitch_rate * yaw.sin(), pitch_rate * yaw.cos(), yaw_rate)
}

/// Time derivative of [`ground_world_rates`].
pub fn ground_world_accels(pitch_rate: f64, pitch_accel: f64, yaw: f64, yaw_rate: f64, yaw_accel: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(
        -pitch_accel * s - pitch_rate * yaw_rate * c,
        pitch_accel * c - pitch_rate * yaw_rate * s,
        yaw_accel,
    )
}

/// Body-frame angular velocity of a roll-free attitude.
pub fn ground_body_rates(pitch: f64, pitch_rate: f64, yaw_rate: f64) -> Vec3 {
    let (s, c) = pitch.sin_cos();
    Vec3::new(-s * yaw_rate, pitch_rate, c * yaw_rate)
}

/// Time derivative of [`ground_body_rates`].
pub fn ground_body_accels(pitch: f64, pitch_rate: f64, pitch_accel: f64, yaw_rate: f64, yaw_accel: f64) -> Vec3 {
    let (s, c) = pitch.sin_cos();
    Vec3::new(
        -c * pitch_rate * yaw_rate - s * yaw_accel,
        pitch_accel,
        -s * pitch_rate * yaw_rate + c * yaw_accel,
    )
}

/// Left and right wheel normals; fails if either wheel would lift.
pub fn wheel_normals(
    normal: f64,
    lateral: f64,
    torque_x: f64,
    pitch: f64,
    params: &VehicleParams,
) -> Result<(f64, f64), FlatnessError> {
    let shift = (lateral * params.wheel_radius + torque_x * pitch.cos()) / params.wheel_offset;
    let (left, right) = (normal / 2.0 - shift, normal / 2.0 + shift);
    if left < 0.0 || right < 0.0 {
        return Err(FlatnessError::WheelLiftOff {
            t: f64::NAN,
            left,
            right,
        });
    }
    Ok((left, right))
}

/// Small-angle estimate of the lateral body thrust needed for a turn.
pub fn lateral_thrust_approx(lateral_accel: f64, params: &VehicleParams) -> f64 {
    params.mass * lateral_accel / (1.0 - params.servo_height / params.wheel_radius)
}

/// Rotor thrusts and tilts realizing a body thrust `(0, thrust_y, thrust_z)`
/// and torques `torque_y`, `torque_z` (the roll torque follows from `thrust_y`).
pub fn allocate(thrust_y: f64, thrust_z: f64, torque_y: f64, torque_z: f64, params: &VehicleParams) -> ControlInput {
    let l = params.arm_length;
    let a1 = 0.5 * (thrust_z - torque_y / l);
    let a2 = 0.5 * (thrust_z + torque_y / l);
    let b1 = 0.5 * (-thrust_y - torque_z / l);
    let b2 = 0.5 * (-thrust_y + torque_z / l);
    ControlInput::new(a1.hypot(b1), a2.hypot(b2), b1.atan2(a1), b2.atan2(a2))
}

fn nearest_branch(angle: f64, anchor: Option<f64>) -> f64 {
    match anchor {
        Some(a) => angle + TAU * ((a - angle) / TAU).round(),
        None => angle,
    }
}

fn jet_vec(derivs: &[Vec3; 5], start: usize) -> JetVec3 {
    JetVec3::from_derivs(&derivs[start], &derivs[start + 1], &derivs[start + 2])
}

fn attitude(q: &JetQuat) -> (Orientation, [f64; 4], Vec3, Vec3) {
    let [w, x, y, z] = q.values();
    let orientation = Orientation::from_wxyz(w, x, y, z).expect("unit quaternion");
    let omega = q.body_rate();
    (orientation, q.rates(), omega.value(), omega.d1())
}

fn required_torque(params: &VehicleParams, omega: &Vec3, omega_dot: &Vec3) -> Vec3 {
    let j = params.inertia_vec();
    j.component_mul(omega_dot) + omega.cross(&j.component_mul(omega))
}

fn check_input(u: ControlInput, params: &VehicleParams, t: f64) -> Result<ControlInput, FlatnessError> {
    u.check_bounds(params)
        .map_err(|source| FlatnessError::InputBounds { t, source })?;
    Ok(u)
}

/// Ground transform without the input-bound check. Fails on pitch-domain,
/// contact or wheel lift-off violations.
pub fn ground_flat_to_reference_unchecked(
    s: &FlatSampleGround,
    params: &VehicleParams,
) -> Result<ReferencePoint, FlatnessError> {
    let t = s.t;
    let m = params.mass;
    let g = params.gravity;
    let (r, w, h1) = (params.wheel_radius, params.wheel_offset, params.servo_height);
    let alpha = s.direction.alpha();
    let sigma_mu = alpha * params.rolling_friction;

    if !(s.thrust_z[0] > 0.0 && s.thrust_z[0] < m * g) {
        return Err(FlatnessError::GroundThrust {
            t,
            thrust: s.thrust_z[0],
        });
    }
    let thrust = Jet::new(s.thrust_z[0], s.thrust_z[1], s.thrust_z[2]);
    let vel = jet_vec(&s.derivs, 1);
    let acc = jet_vec(&s.derivs, 2);

    let mut flags = ReferenceFlags::default();
    let yaw = match travel_heading(&s.derivs[1], s.direction) {
        Some(_) => {
            let yaw = (vel.y() * alpha).atan2(vel.x() * alpha);
            Jet::new(nearest_branch(yaw.v, s.yaw_hint), yaw.d1, yaw.d2)
        }
        None => {
            flags.yaw_held = true;
            Jet::constant(s.yaw_hint.unwrap_or(0.0))
        }
    };
    let (sy, cy) = (yaw.sin(), yaw.cos());
    let a_long = acc.x() * cy + acc.y() * sy;
    let pitch = pitch_jet(a_long, thrust, s.direction, params, t)?;

    let q = JetQuat::axis_angle(2, yaw).mul(&JetQuat::axis_angle(1, pitch));
    let (orientation, q_rate, omega, omega_dot) = attitude(&q);
    let req = required_torque(params, &omega, &omega_dot);

    let a_l = centripetal_accel(&s.derivs[1], yaw.v, yaw.d1);
    let (sp, cp) = pitch.v.sin_cos();

    // Heading-frame ground torque as affine functions of the lateral body
    // thrust y: bracket_x = bx0 + bx1 y, bracket_z = bz0 + bz1 y.
    let bx0 = 3.0 * r * m * a_l;
    let bx1 = -3.0 * r + 2.0 * h1 * cp;
    let bz0 = -2.0 * sigma_mu * r * m * a_l;
    let bz1 = -2.0 * sigma_mu * (-r + h1 * cp);
    // Body roll balance: h1 y + cos(pitch) bracket_x - sin(pitch) bracket_z = req_x.
    let thrust_y = (req.x - cp * bx0 + sp * bz0) / (h1 + cp * bx1 - sp * bz1);
    let bracket_x = bx0 + bx1 * thrust_y;
    let bracket_z = bz0 + bz1 * thrust_y;
    let bracket_y = (m - 2.0 * params.wheel_mass) * params.axle_offset * g * sp;
    let torque_y = req.y - bracket_y;
    let torque_z = req.z - (sp * bracket_x + cp * bracket_z);

    let normal = m * g - thrust.v * cp;
    if normal < 0.0 {
        return Err(FlatnessError::ContactLoss { t, normal });
    }
    let lateral = m * a_l - thrust_y;
    let shift = (lateral * r + h1 * thrust_y * cp) / w;
    let normals = (normal / 2.0 - shift, normal / 2.0 + shift);
    if normals.0 < 0.0 || normals.1 < 0.0 {
        return Err(FlatnessError::WheelLiftOff {
            t,
            left: normals.0,
            right: normals.1,
        });
    }

    let input = allocate(thrust_y, thrust.v, torque_y, torque_z, params);
    let state = RobotState {
        position: s.derivs[0],
        velocity: s.derivs[1],
        orientation,
        omega,
    };
    Ok(ReferencePoint {
        t,
        state,
        input,
        mode: Mode::Ground(s.direction),
        state_rate: StateDerivative {
            position: s.derivs[1],
            velocity: s.derivs[2],
            orientation: q_rate,
            omega: omega_dot,
        },
        wheel_normals: Some(normals),
        thrust_z: thrust.v,
        thrust_y,
        flags,
    })
}

/// Ground transform with all feasibility checks, including input bounds.
pub fn ground_flat_to_reference(
    s: &FlatSampleGround,
    params: &VehicleParams,
) -> Result<ReferencePoint, FlatnessError> {
    let mut rp = ground_flat_to_reference_unchecked(s, params)?;
    rp.input = check_input(rp.input, params, s.t)?;
    Ok(rp)
}

/// Aerial transform without the input-bound check.
pub fn aerial_flat_to_reference_unchecked(
    s: &FlatSampleAerial,
    params: &VehicleParams,
) -> Result<ReferencePoint, FlatnessError> {
    let t = s.t;
    let acc = jet_vec(&s.derivs, 2);
    let f = JetVec3([acc.x(), acc.y(), acc.z() + params.gravity]);
    let f_norm = (f.x() * f.x() + f.y() * f.y() + f.z() * f.z()).sqrt();
    if f_norm.v < FREE_FALL_EPS {
        return Err(FlatnessError::FreeFall { t });
    }
    let yaw = Jet::new(s.yaw[0], s.yaw[1], s.yaw[2]);
    let (sy, cy) = (yaw.sin(), yaw.cos());
    let fx = cy * f.x() + sy * f.y();
    let fy = cy * f.y() - sy * f.x();
    let fz = f.z();
    let pitch = fx.atan2(fz);
    let roll = (-fy).atan2((fx * fx + fz * fz).sqrt());

    let q = JetQuat::axis_angle(2, yaw)
        .mul(&JetQuat::axis_angle(1, pitch))
        .mul(&JetQuat::axis_angle(0, roll));
    let (orientation, q_rate, omega, omega_dot) = attitude(&q);
    let req = required_torque(params, &omega, &omega_dot);

    let thrust_z = params.mass * f_norm.v;
    let thrust_y = req.x / params.servo_height;
    let input = allocate(thrust_y, thrust_z, req.y, req.z, params);
    let state = RobotState {
        position: s.derivs[0],
        velocity: s.derivs[1],
        orientation,
        omega,
    };
    Ok(ReferencePoint {
        t,
        state,
        input,
        mode: Mode::Aerial,
        state_rate: StateDerivative {
            position: s.derivs[1],
            velocity: s.derivs[2],
            orientation: q_rate,
            omega: omega_dot,
        },
        wheel_normals: None,
        thrust_z,
        thrust_y,
        flags: ReferenceFlags::default(),
    })
}

pub fn aerial_flat_to_reference(
    s: &FlatSampleAerial,
    params: &VehicleParams,
) -> Result<ReferencePoint, FlatnessError> {
    let mut rp = aerial_flat_to_reference_unchecked(s, params)?;
    rp.input = check_input(rp.input, params, s.t)?;
    Ok(rp)
}

/// Wraps the yaw of consecutive references onto a continuous branch.
pub fn unwrap_reference_yaw(yaws: &[f64]) -> Vec<f64> {
    crate::rotation::unwrap_angles(yaws)
}

/// Largest jump between consecutive angles, for continuity checks.
pub fn max_angle_jump(angles: &[f64]) -> f64 {
    angles
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}
