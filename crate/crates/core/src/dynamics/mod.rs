//! Unified aerial/ground rigid-body model, ground reaction and slip
//! resolution, RK4 integration and a stepping simulator.

mod sim;

pub use sim::{SimEvent, Simulator, StepRecord};

use nalgebra::Quaternion;
use thiserror::Error;

use crate::params::VehicleParams;
use crate::rotation::{euler_to_orientation, intermediate_frame_rotation, pitch_rotation, Orientation};
use crate::state::{ControlInput, InputError, Mode, RobotState, StateVector};
use crate::Vec3;

/// Speed below which the vehicle counts as stationary on the ground.
pub const SPEED_EPS: f64 = 0.01;
/// Altitude margin above the contact height for touchdown detection.
pub const TOUCHDOWN_MARGIN: f64 = 1e-3;
/// Any state component beyond this magnitude aborts integration.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("ground contact lost: normal force {normal:.6} N")]
    ContactLost { normal: f64 },
    #[error("state diverged at t = {t:.4} s (|x| = {magnitude:e})")]
    Divergence { t: f64, magnitude: f64 },
    #[error("time step {0} s outside (0, 0.02]")]
    TimeStep(f64),
}

/// Thrust and torque produced by the rotors, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyWrench {
    pub thrust: Vec3,
    pub torque: Vec3,
}

/// Rotor wrench, rejecting inputs outside the actuator limits.
pub fn actuator_wrench(u: &ControlInput, params: &VehicleParams) -> Result<BodyWrench, InputError> {
    u.check_bounds(params)?;
    Ok(actuator_wrench_unchecked(u, params))
}

pub fn actuator_wrench_unchecked(u: &ControlInput, params: &VehicleParams) -> BodyWrench {
    let (s1, c1) = u.tilt1.sin_cos();
    let (s2, c2) = u.tilt2.sin_cos();
    let lateral = -u.thrust1 * s1 - u.thrust2 * s2;
    let l = params.arm_length;
    BodyWrench {
        thrust: Vec3::new(0.0, lateral, u.thrust1 * c1 + u.thrust2 * c2),
        torque: Vec3::new(
            lateral * params.servo_height,
            (-u.thrust1 * c1 + u.thrust2 * c2) * l,
            (-u.thrust1 * s1 + u.thrust2 * s2) * l,
        ),
    }
}

/// Heading-aligned ground axes `(x_G, y_G)` in the world frame.
pub fn ground_axes(yaw: f64) -> (Vec3, Vec3) {
    let (s, c) = yaw.sin_cos();
    (Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0))
}

/// Lateral (centripetal) acceleration of a non-slipping wheel pair:
/// longitudinal speed times yaw rate. Zero below [`SPEED_EPS`].
pub fn centripetal_accel(v_world: &Vec3, yaw: f64, yaw_rate: f64) -> f64 {
    if v_world.xy().norm() < SPEED_EPS {
        return 0.0;
    }
    let (x_g, _) = ground_axes(yaw);
    v_world.dot(&x_g) * yaw_rate
}

/// Sign of the longitudinal speed with a dead-band of [`SPEED_EPS`].
pub fn travel_sign(v_long: f64) -> f64 {
    if v_long.abs() < SPEED_EPS {
        0.0
    } else {
        v_long.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReactionFlags {
    /// Total normal force is not positive.
    pub contact_lost: bool,
    pub left_lift_off: bool,
    pub right_lift_off: bool,
}

/// Ground force (heading frame) and torque (body frame) on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundReaction {
    pub rolling: f64,
    pub lateral: f64,
    pub normal: f64,
    pub normal_left: f64,
    pub normal_right: f64,
    pub rolling_left: f64,
    pub rolling_right: f64,
    pub torque: Vec3,
    pub flags: ReactionFlags,
}

impl GroundReaction {
    /// Force in the heading-aligned frame.
    pub fn force(&self) -> Vec3 {
        Vec3::new(self.rolling, self.lateral, self.normal)
    }

    /// Per-wheel normals with lifted wheels reported as zero.
    pub fn clamped_normals(&self) -> (f64, f64) {
        (self.normal_left.max(0.0), self.normal_right.max(0.0))
    }

    /// Torque bracket before rotation into the body frame.
    pub fn heading_frame_torque(&self, pitch: f64) -> Vec3 {
        pitch_rotation(pitch) * self.torque
    }
}

/// Splits the total normal force over the two wheels.
pub fn wheel_split(
    normal: f64,
    lateral: f64,
    torque_x: f64,
    pitch: f64,
    params: &VehicleParams,
) -> (f64, f64) {
    let d = (lateral * params.wheel_radius + torque_x * pitch.cos()) / params.wheel_offset;
    (normal / 2.0 - d, normal / 2.0 + d)
}

/// Ground reaction for a given lateral friction force. Never fails; problems
/// are reported through `flags`.
pub fn reaction_with_lateral(
    pitch: f64,
    v_long: f64,
    wrench: &BodyWrench,
    lateral: f64,
    params: &VehicleParams,
) -> GroundReaction {
    let m = params.mass;
    let (sp, cp) = pitch.sin_cos();
    let normal = m * params.gravity - wrench.thrust.z * cp;
    let sign = travel_sign(v_long);
    let mu = params.rolling_friction;
    let (left, right) = wheel_split(normal, lateral, wrench.torque.x, pitch, params);
    let rolling_left = -mu * left * sign;
    let rolling_right = -mu * right * sign;
    let w = params.wheel_offset;
    let bracket = Vec3::new(
        lateral * params.wheel_radius + (right - left) * w,
        (m - 2.0 * params.wheel_mass) * params.axle_offset * params.gravity * sp,
        (rolling_right - rolling_left) * w,
    );
    GroundReaction {
        rolling: -mu * normal * sign,
        lateral,
        normal,
        normal_left: left,
        normal_right: right,
        rolling_left,
        rolling_right,
        torque: pitch_rotation(pitch).transpose() * bracket,
        flags: ReactionFlags {
            contact_lost: normal <= 0.0,
            left_lift_off: left < 0.0,
            right_lift_off: right < 0.0,
        },
    }
}

/// Ground reaction with the lateral friction that enforces rolling without
/// side slip. Fails when the ground no longer pushes on the vehicle.
pub fn ground_reaction(
    state: &RobotState,
    wrench: &BodyWrench,
    lateral_accel: f64,
    params: &VehicleParams,
) -> Result<GroundReaction, DynamicsError> {
    let e = state.orientation.euler_unchecked();
    let (x_g, _) = ground_axes(e.yaw);
    let lateral = params.mass * lateral_accel - wrench.thrust.y;
    let r = reaction_with_lateral(e.pitch, state.velocity.dot(&x_g), wrench, lateral, params);
    if r.flags.contact_lost {
        return Err(DynamicsError::ContactLost { normal: r.normal });
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlipState {
    Stick,
    /// Lateral force the ground cannot supply [N].
    Slip(f64),
}

impl SlipState {
    pub fn is_slip(&self) -> bool {
        matches!(self, SlipState::Slip(_))
    }
}

pub fn slip_check(reaction: &GroundReaction, params: &VehicleParams) -> SlipState {
    let cap = params.lateral_friction * reaction.normal.max(0.0);
    let demand = reaction.lateral.abs();
    if demand <= cap {
        SlipState::Stick
    } else {
        SlipState::Slip(demand - cap)
    }
}

/// Ideal (momentum theory) power of both rotors.
pub fn rotor_power(u: &ControlInput, params: &VehicleParams) -> f64 {
    let k = 2.0 * params.disk_area * params.air_density;
    [u.thrust1, u.thrust2]
        .iter()
        .map(|t| (t.max(0.0).powi(3) / k).sqrt())
        .sum()
}

/// Lateral contact behaviour in ground mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactModel {
    /// Saturate lateral friction at the sticking limit and let the vehicle
    /// slide sideways when it is exceeded.
    pub slip: bool,
    /// Time constant with which sticking friction removes lateral velocity.
    pub relaxation_time: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            slip: false,
            relaxation_time: 0.02,
        }
    }
}

impl ContactModel {
    pub fn slippery() -> Self {
        Self {
            slip: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Quaternion rate in `(w, x, y, z)` order.
    pub orientation: [f64; 4],
    pub omega: Vec3,
}

impl StateDerivative {
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        for i in 0..4 {
            x[6 + i] = self.orientation[i];
        }
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }
}

/// Ground contact details of one model evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundContact {
    pub reaction: GroundReaction,
    pub slip: SlipState,
    /// Lateral force needed to stick, before saturation.
    pub required_lateral: f64,
    /// Torque about the heading axis that keeps roll at zero.
    pub constraint_torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub derivative: StateDerivative,
    pub wrench: BodyWrench,
    pub contact: Option<GroundContact>,
}

/// Puts a state onto the rolling manifold: CoM at wheel height, no vertical
/// velocity, zero roll and roll rate, and (optionally) no side velocity.
pub fn project_to_ground(state: &RobotState, params: &VehicleParams, zero_lateral: bool) -> RobotState {
    let e = state.orientation.euler_unchecked();
    let mut orientation = euler_to_orientation(0.0, e.pitch, e.yaw);
    // Stay on the caller's quaternion hemisphere so rates keep their sign.
    if orientation.unit().coords.dot(&state.orientation.unit().coords) < 0.0 {
        orientation = Orientation::from_unit(nalgebra::UnitQuaternion::new_unchecked(
            -orientation.unit().into_inner(),
        ));
    }
    let (x_g, y_g) = ground_axes(e.yaw);
    let mut omega_w = state.orientation.rotate(&state.omega);
    omega_w -= x_g * omega_w.dot(&x_g);
    let mut velocity = state.velocity;
    velocity.z = 0.0;
    if zero_lateral {
        velocity -= y_g * velocity.dot(&y_g);
    }
    let mut position = state.position;
    position.z = params.contact_height();
    RobotState {
        position,
        velocity,
        orientation,
        omega: orientation.inverse_rotate(&omega_w),
    }
}

fn quaternion_rate(state: &RobotState) -> [f64; 4] {
    let q = state.orientation.unit().quaternion();
    let dq = q * Quaternion::from_parts(0.0, state.omega) * 0.5;
    [dq.w, dq.i, dq.j, dq.k]
}

fn gravity(params: &VehicleParams) -> Vec3 {
    Vec3::new(0.0, 0.0, -params.gravity)
}

/// Evaluates the model without failing. In ground mode the state is first
/// projected onto the rolling manifold.
pub fn evaluate(
    state: &RobotState,
    u: &ControlInput,
    mode: Mode,
    params: &VehicleParams,
    contact: &ContactModel,
) -> Evaluation {
    let wrench = actuator_wrench_unchecked(u, params);
    let j = params.inertia_vec();
    let m = params.mass;
    match mode {
        Mode::Aerial => {
            let gyro = state.omega.cross(&j.component_mul(&state.omega));
            let derivative = StateDerivative {
                position: state.velocity,
                velocity: gravity(params) + state.orientation.rotate(&wrench.thrust) / m,
                orientation: quaternion_rate(state),
                omega: (wrench.torque - gyro).component_div(&j),
            };
            Evaluation {
                derivative,
                wrench,
                contact: None,
            }
        }
        Mode::Ground(_) => {
            let s = project_to_ground(state, params, !contact.slip);
            let e = s.orientation.euler_unchecked();
            let (x_g, y_g) = ground_axes(e.yaw);
            let omega_w = s.orientation.rotate(&s.omega);
            let yaw_rate = omega_w.z;
            let v_long = s.velocity.dot(&x_g);
            let v_lat = s.velocity.dot(&y_g);
            let a_l = centripetal_accel(&s.velocity, e.yaw, yaw_rate);

            let required = if contact.slip {
                m * (a_l - v_lat / contact.relaxation_time) - wrench.thrust.y
            } else {
                m * a_l - wrench.thrust.y
            };
            let probe = reaction_with_lateral(e.pitch, v_long, &wrench, required, params);
            let slip = slip_check(&probe, params);
            let reaction = match slip {
                SlipState::Slip(_) if contact.slip => {
                    let cap = params.lateral_friction * probe.normal.max(0.0);
                    reaction_with_lateral(e.pitch, v_long, &wrench, cap * required.signum(), params)
                }
                _ => probe,
            };

            let force_w = intermediate_frame_rotation(e.yaw) * reaction.force();
            let velocity_dot = gravity(params) + (s.orientation.rotate(&wrench.thrust) + force_w) / m;

            // Roll is held by the ground: add the torque about the heading
            // axis that makes d/dt (omega_world . x_G) vanish.
            let gyro = s.omega.cross(&j.component_mul(&s.omega));
            let rhs = wrench.torque + reaction.torque - gyro;
            let axis = s.orientation.inverse_rotate(&x_g);
            let target = -yaw_rate * omega_w.dot(&y_g);
            let j_inv_axis = axis.component_div(&j);
            let lambda = (target - rhs.component_div(&j).dot(&axis)) / j_inv_axis.dot(&axis);
            let omega_dot = (rhs + axis * lambda).component_div(&j);

            let derivative = StateDerivative {
                position: s.velocity,
                velocity: velocity_dot,
                orientation: quaternion_rate(&s),
                omega: omega_dot,
            };
            Evaluation {
                derivative,
                wrench,
                contact: Some(GroundContact {
                    reaction,
                    slip,
                    required_lateral: required,
                    constraint_torque: lambda,
                }),
            }
        }
    }
}

/// Continuous-time model with the default no-slip contact. Rejects inputs
/// outside the actuator limits and ground states that have lost contact.
pub fn derivative(
    state: &RobotState,
    u: &ControlInput,
    mode: Mode,
    params: &VehicleParams,
) -> Result<StateDerivative, DynamicsError> {
    u.check_bounds(params)?;
    let ev = evaluate(state, u, mode, params, &ContactModel::default());
    if let Some(c) = ev.contact {
        if c.reaction.flags.contact_lost {
            return Err(DynamicsError::ContactLost {
                normal: c.reaction.normal,
            });
        }
    }
    Ok(ev.derivative)
}

/// One RK4 step of the model without projection or checks.
pub fn rk4(
    state: &RobotState,
    u: &ControlInput,
    mode: Mode,
    dt: f64,
    params: &VehicleParams,
    contact: &ContactModel,
) -> RobotState {
    let f = |x: &StateVector| {
        evaluate(&RobotState::from_vector(x), u, mode, params, contact)
            .derivative
            .to_vector()
    };
    let x0 = state.to_vector();
    let k1 = f(&x0);
    let k2 = f(&(x0 + k1 * (dt / 2.0)));
    let k3 = f(&(x0 + k2 * (dt / 2.0)));
    let k4 = f(&(x0 + k3 * dt));
    let x1 = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    RobotState::from_vector(&x1)
}

/// Integrates one step, renormalizes the attitude and, in ground mode,
/// re-projects onto the rolling manifold.
pub fn step_with(
    state: &RobotState,
    u: &ControlInput,
    mode: Mode,
    dt: f64,
    params: &VehicleParams,
    contact: &ContactModel,
) -> Result<RobotState, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(DynamicsError::TimeStep(dt));
    }
    let mut next = rk4(state, u, mode, dt, params, contact);
    next.orientation = next.orientation.renormalized();
    if mode.is_ground() {
        next = project_to_ground(&next, params, !contact.slip);
    }
    let magnitude = next.max_abs();
    if !next.is_finite() || magnitude > DIVERGENCE_LIMIT {
        return Err(DynamicsError::Divergence {
            t: dt,
            magnitude: if magnitude.is_finite() { magnitude } else { f64::INFINITY },
        });
    }
    Ok(next)
}

pub fn step(
    state: &RobotState,
    u: &ControlInput,
    mode: Mode,
    dt: f64,
    params: &VehicleParams,
) -> Result<RobotState, DynamicsError> {
    step_with(state, u, mode, dt, params, &ContactModel::default())
}
