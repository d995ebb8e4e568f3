//! Receding-horizon tracking controller.
//!
//! Each call linearizes the discretized hybrid model along a warm-started
//! input guess, condenses the horizon into a dense QP over the inputs and
//! solves it with the dual active-set method in [`qp`]. Input boxes are hard
//! constraints; per-wheel normal forces at ground steps enter linearized and
//! are softened with an L1 slack only when the hard QP is infeasible.

mod control_loop;
pub mod qp;

pub use control_loop::{
    control_loop, ControlError, LoopConfig, NoiseConfig, RunLog, RunOutcome, TickRecord,
};

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{evaluate, rk4, ContactModel, DIVERGENCE_LIMIT};
use crate::flatness::ReferencePoint;
use crate::params::VehicleParams;
use crate::state::{ControlInput, InputVector, Mode, RobotState, StateVector, INPUT_DIM, STATE_DIM};
use qp::{QpOptions, QpProblem};

/// Relative forward-difference step of the discretization Jacobians.
pub const FD_STEP: f64 = 1e-6;

type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("expected {expected} references, got {got}")]
    Horizon { expected: usize, got: usize },
    #[error("current state is not finite")]
    NonFinite,
    #[error("prediction diverged at step {step}")]
    Divergence { step: usize },
}

/// Horizon, weights, bounds and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmpcConfig {
    /// Number of shooting intervals K.
    pub horizon: usize,
    /// Interval length [s].
    pub dt: f64,
    pub q_position: [f64; 3],
    pub q_velocity: [f64; 3],
    /// Weights on the (w, x, y, z) quaternion difference.
    pub q_attitude: [f64; 4],
    pub q_omega: [f64; 3],
    /// Weights on (T1, T2, δ1, δ2).
    pub q_input: [f64; 4],
    /// Lower input bounds; the actuator limits when absent.
    pub u_min: Option<[f64; 4]>,
    pub u_max: Option<[f64; 4]>,
    /// Minimum predicted per-wheel normal force [N].
    pub normal_margin: f64,
    /// Enforce the normal-force constraints at ground steps.
    pub normal_constraints: bool,
    /// Force δ1 = −δ2 at every step (no net lateral thrust).
    pub zero_net_tilt: bool,
    /// L1 penalty on normal-force slack in the relaxed QP.
    pub slack_penalty: f64,
    pub feasibility_tol: f64,
    /// KKT residual above which a solution is reported as inaccurate.
    pub kkt_tol: f64,
    pub max_qp_iterations: usize,
    /// Linearize-and-solve passes per call; 1 is the real-time iteration.
    pub sqp_iterations: usize,
    /// Consecutive degraded ticks tolerated by the control loop.
    pub max_degraded_ticks: usize,
    /// RK4 sub-steps per interval in the aerial prediction model.
    pub aerial_substeps: usize,
    /// RK4 sub-steps per interval on the ground, where the lateral friction
    /// couples yaw rate into a fast mode.
    pub ground_substeps: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            q_position: [1000.0, 1000.0, 500.0],
            q_velocity: [100.0; 3],
            q_attitude: [200.0; 4],
            q_omega: [10.0; 3],
            q_input: [10.0, 1.0, 1.0, 1.0],
            u_min: None,
            u_max: None,
            normal_margin: 0.0,
            normal_constraints: true,
            zero_net_tilt: false,
            slack_penalty: 1e4,
            feasibility_tol: 1e-10,
            kkt_tol: 1e-6,
            max_qp_iterations: 500,
            sqp_iterations: 1,
            max_degraded_ticks: 20,
            aerial_substeps: 1,
            ground_substeps: 4,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let fail = |m: &str| Err(NmpcError::Config(m.to_string()));
        if self.horizon < 1 {
            return fail("horizon must be at least 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail("dt must be positive");
        }
        let weights = self
            .q_position
            .iter()
            .chain(&self.q_velocity)
            .chain(&self.q_attitude)
            .chain(&self.q_omega)
            .chain(&self.q_input);
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return fail("weights must be finite and non-negative");
            }
        }
        if let (Some(lo), Some(hi)) = (self.u_min, self.u_max) {
            if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
                return fail("u_min must be below u_max componentwise");
            }
        }
        if self.aerial_substeps < 1 || self.ground_substeps < 1 {
            return fail("sub-step counts must be at least 1");
        }
        if self.sqp_iterations < 1 || self.max_qp_iterations < 1 {
            return fail("iteration limits must be at least 1");
        }
        if !(self.slack_penalty > 0.0) {
            return fail("slack_penalty must be positive");
        }
        Ok(())
    }

    /// Effective input bounds.
    pub fn bounds(&self, params: &VehicleParams) -> (InputVector, InputVector) {
        let lo = self
            .u_min
            .map(InputVector::from)
            .unwrap_or_else(|| ControlInput::lower_bound(params).to_vector());
        let hi = self
            .u_max
            .map(InputVector::from)
            .unwrap_or_else(|| ControlInput::upper_bound(params).to_vector());
        (lo, hi)
    }

    pub fn substeps(&self, mode: Mode) -> usize {
        if mode.is_ground() {
            self.ground_substeps
        } else {
            self.aerial_substeps
        }
    }

    fn state_weights(&self) -> StateVector {
        let mut q = StateVector::zeros();
        for i in 0..3 {
            q[i] = self.q_position[i];
            q[3 + i] = self.q_velocity[i];
            q[10 + i] = self.q_omega[i];
        }
        for i in 0..4 {
            q[6 + i] = self.q_attitude[i];
        }
        q
    }
}

/// One discretized model step with its Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub next: RobotState,
    /// ∂x_next/∂x.
    pub a: StateMatrix,
    /// ∂x_next/∂u.
    pub b: InputMatrix,
}

fn step_state(x: &RobotState, u: &ControlInput, mode: Mode, dt: f64, substeps: usize, params: &VehicleParams) -> RobotState {
    let h = dt / substeps as f64;
    let mut s = *x;
    for _ in 0..substeps {
        s = rk4(&s, u, mode, h, params, &ContactModel::default());
    }
    s
}

fn step_vector(
    x: &StateVector,
    u: &InputVector,
    mode: Mode,
    dt: f64,
    substeps: usize,
    params: &VehicleParams,
) -> StateVector {
    step_state(&RobotState::from_vector(x), &ControlInput::from_vector(u), mode, dt, substeps, params).to_vector()
}

fn check_finite(x: &StateVector) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
}

/// One RK4 step of the model in `mode` (no-slip contact) with
/// forward-difference Jacobians.
pub fn discretize(
    x: &RobotState,
    u: &ControlInput,
    mode: Mode,
    dt: f64,
    params: &VehicleParams,
) -> Result<Discretization, NmpcError> {
    discretize_substeps(x, u, mode, dt, 1, params)
}

/// As [`discretize`] with `substeps` RK4 steps of `dt / substeps`.
pub fn discretize_substeps(
    x: &RobotState,
    u: &ControlInput,
    mode: Mode,
    dt: f64,
    substeps: usize,
    params: &VehicleParams,
) -> Result<Discretization, NmpcError> {
    let x0 = x.to_vector();
    let u0 = u.to_vector();
    let f0 = step_vector(&x0, &u0, mode, dt, substeps, params);
    if !check_finite(&f0) {
        return Err(NmpcError::Divergence { step: 0 });
    }
    let mut a = StateMatrix::zeros();
    for i in 0..STATE_DIM {
        let h = FD_STEP * x0[i].abs().max(1.0);
        let mut xp = x0;
        xp[i] += h;
        let col = (step_vector(&xp, &u0, mode, dt, substeps, params) - f0) / h;
        a.set_column(i, &col);
    }
    let mut b = InputMatrix::zeros();
    for i in 0..INPUT_DIM {
        let h = FD_STEP * u0[i].abs().max(1.0);
        let mut up = u0;
        up[i] += h;
        let col = (step_vector(&x0, &up, mode, dt, substeps, params) - f0) / h;
        b.set_column(i, &col);
    }
    Ok(Discretization {
        next: RobotState::from_vector(&f0),
        a,
        b,
    })
}

/// `x − x_r` with the reference quaternion flipped onto the hemisphere of
/// `align` (usually `x` itself).
pub fn state_error(x: &StateVector, reference: &RobotState, align: &StateVector) -> StateVector {
    let mut r = reference.to_vector();
    let dot: f64 = (6..10).map(|i| align[i] * r[i]).sum();
    if dot < 0.0 {
        for i in 6..10 {
            r[i] = -r[i];
        }
    }
    x - r
}

/// Tracking cost of a predicted trajectory `states` (K+1) under `inputs` (K).
pub fn tracking_cost(
    states: &[RobotState],
    inputs: &[ControlInput],
    refs: &[ReferencePoint],
    cfg: &NmpcConfig,
) -> f64 {
    let q = cfg.state_weights();
    let qu = InputVector::from(cfg.q_input);
    let mut cost = 0.0;
    for (x, r) in states.iter().zip(refs) {
        let xv = x.to_vector();
        let e = state_error(&xv, &r.state, &xv);
        cost += e.component_mul(&e).dot(&q);
    }
    for (u, r) in inputs.iter().zip(refs) {
        let e = u.to_vector() - r.input.to_vector();
        cost += e.component_mul(&e).dot(&qu);
    }
    cost
}

/// Nonlinear open-loop prediction with the per-step modes.
pub fn rollout(
    x0: &RobotState,
    inputs: &[ControlInput],
    modes: &[Mode],
    cfg: &NmpcConfig,
    params: &VehicleParams,
) -> Result<Vec<RobotState>, NmpcError> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for (k, (u, &mode)) in inputs.iter().zip(modes).enumerate() {
        let next = step_state(&states[k], u, mode, cfg.dt, cfg.substeps(mode), params);
        if !check_finite(&next.to_vector()) {
            return Err(NmpcError::Divergence { step: k });
        }
        states.push(next);
    }
    Ok(states)
}

/// Per-wheel normal forces `(left, right)` predicted by the no-slip ground
/// model for state `x` and input `u`.
pub fn wheel_normals(x: &RobotState, u: &ControlInput, mode: Mode, params: &VehicleParams) -> Option<(f64, f64)> {
    evaluate(x, u, mode, params, &ContactModel::default())
        .contact
        .map(|c| (c.reaction.normal_left, c.reaction.normal_right))
}

struct NormalLinearization {
    value: [f64; 2],
    dx: [SMatrix<f64, 1, STATE_DIM>; 2],
    du: [SMatrix<f64, 1, INPUT_DIM>; 2],
}

fn linearize_normals(x: &StateVector, u: &InputVector, mode: Mode, params: &VehicleParams) -> NormalLinearization {
    let eval = |x: &StateVector, u: &InputVector| {
        let (l, r) = wheel_normals(&RobotState::from_vector(x), &ControlInput::from_vector(u), mode, params)
            .expect("ground mode");
        [l, r]
    };
    let n0 = eval(x, u);
    let mut dx = [SMatrix::<f64, 1, STATE_DIM>::zeros(); 2];
    let mut du = [SMatrix::<f64, 1, INPUT_DIM>::zeros(); 2];
    for i in 0..STATE_DIM {
        let h = FD_STEP * x[i].abs().max(1.0);
        let mut xp = *x;
        xp[i] += h;
        let n = eval(&xp, u);
        for w in 0..2 {
            dx[w][i] = (n[w] - n0[w]) / h;
        }
    }
    for i in 0..INPUT_DIM {
        let h = FD_STEP * u[i].abs().max(1.0);
        let mut up = *u;
        up[i] += h;
        let n = eval(x, &up);
        for w in 0..2 {
            du[w][i] = (n[w] - n0[w]) / h;
        }
    }
    NormalLinearization { value: n0, dx, du }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    /// Hard-constrained QP solved.
    Optimal,
    /// Normal-force constraints softened with slack.
    Relaxed,
    /// No QP solution; the warm start is returned.
    Degraded,
}

impl QpStatus {
    pub fn label(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Relaxed => "relaxed",
            QpStatus::Degraded => "degraded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// u(0..K−1).
    pub inputs: Vec<ControlInput>,
    /// Linearized prediction x(0..K).
    pub states: Vec<RobotState>,
    /// Prediction-model mode of each interval.
    pub modes: Vec<Mode>,
    /// Linearized per-wheel normals at ground steps.
    pub normals: Vec<Option<(f64, f64)>>,
    /// Largest normal-force slack per step.
    pub slacks: Vec<f64>,
    pub status: QpStatus,
    /// Tracking cost of the predicted trajectory.
    pub cost: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
}

impl OcpSolution {
    pub fn first_input(&self) -> ControlInput {
        self.inputs[0]
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(0.0, f64::max)
    }
}


/// Linearization guess: inputs u(0..K−1) and states x(0..K).
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub inputs: Vec<ControlInput>,
    pub states: Vec<RobotState>,
}

impl WarmStart {
    pub fn from_solution(sol: &OcpSolution) -> Self {
        Self {
            inputs: sol.inputs.clone(),
            states: sol.states.clone(),
        }
    }

    /// Reference trajectory as the guess (cold start).
    pub fn from_references(refs: &[ReferencePoint]) -> Self {
        let k = refs.len().saturating_sub(1);
        Self {
            inputs: refs[..k].iter().map(|r| r.input).collect(),
            states: refs.iter().map(|r| r.state).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Moves the guess forward by `fraction` of a horizon interval with
    /// linear interpolation; the tail repeats the last input and state.
    /// `advance(1.0)` is the classic one-step shift.
    pub fn advance(&self, fraction: f64) -> Self {
        let k = self.inputs.len();
        if k == 0 {
            return self.clone();
        }
        let whole = fraction.floor();
        let w = fraction - whole;
        let at = |i: usize, last: usize| (i + whole as usize).min(last);
        let inputs = (0..k)
            .map(|i| {
                let a = self.inputs[at(i, k - 1)].to_vector();
                let b = self.inputs[at(i + 1, k - 1)].to_vector();
                ControlInput::from_vector(&(a + (b - a) * w))
            })
            .collect();
        let states = (0..=k)
            .map(|i| {
                let a = self.states[at(i, k)].to_vector();
                let b = align_quaternion(&self.states[at(i + 1, k)].to_vector(), &a);
                RobotState::from_vector(&(a + (b - a) * w))
            })
            .collect();
        Self { inputs, states }
    }
}

/// Shifts an input sequence one step forward, repeating the last input.
pub fn shift_inputs(inputs: &[ControlInput]) -> Vec<ControlInput> {
    match inputs.split_first() {
        None => Vec::new(),
        Some((_, rest)) => {
            let mut out = rest.to_vec();
            out.push(*inputs.last().unwrap());
            out
        }
    }
}

/// Warm start for the next horizon interval: the previous solution shifted
/// by one step with the last input and state repeated.
pub fn shift_warm_start(prev: &OcpSolution) -> WarmStart {
    WarmStart::from_solution(prev).advance(1.0)
}

/// Flips the quaternion block of `x` onto the hemisphere of `like`.
fn align_quaternion(x: &StateVector, like: &StateVector) -> StateVector {
    let dot: f64 = (6..10).map(|i| x[i] * like[i]).sum();
    let mut out = *x;
    if dot < 0.0 {
        for i in 6..10 {
            out[i] = -out[i];
        }
    }
    out
}

struct Linearization {
    /// Linearization states, hemisphere-consistent along the horizon.
    xbar: Vec<StateVector>,
    a: Vec<StateMatrix>,
    b: Vec<InputMatrix>,
    /// Response to the initial deviation and the shooting defects with
    /// δu = 0: δx_{k+1} = A δx_k + c_k.
    free: Vec<StateVector>,
}

fn linearize(
    x0: &RobotState,
    guess: &WarmStart,
    modes: &[Mode],
    cfg: &NmpcConfig,
    params: &VehicleParams,
) -> Result<Linearization, NmpcError> {
    let k = guess.horizon();
    let mut xbar = Vec::with_capacity(k + 1);
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut free = Vec::with_capacity(k + 1);
    let first = guess.states[0].to_vector();
    xbar.push(first);
    free.push(align_quaternion(&x0.to_vector(), &first) - first);
    for i in 0..k {
        let xi = RobotState::from_vector(&xbar[i]);
        let d = discretize_substeps(&xi, &guess.inputs[i], modes[i], cfg.dt, cfg.substeps(modes[i]), params)
            .map_err(|_| NmpcError::Divergence { step: i })?;
        let next = d.next.to_vector();
        let target = align_quaternion(&guess.states[i + 1].to_vector(), &next);
        free.push(d.a * free[i] + (next - target));
        xbar.push(target);
        a.push(d.a);
        b.push(d.b);
    }
    Ok(Linearization { xbar, a, b, free })
}

/// One linearize-condense-solve pass around `guess`.
fn rti_pass(
    x0: &RobotState,
    refs: &[ReferencePoint],
    cfg: &NmpcConfig,
    params: &VehicleParams,
    guess: &WarmStart,
) -> OcpSolution {
    let k = cfg.horizon;
    let nu = INPUT_DIM * k;
    let modes: Vec<Mode> = refs[..k].iter().map(|r| r.mode).collect();
    let lin = match linearize(x0, guess, &modes, cfg, params) {
        Ok(l) => l,
        Err(_) => return degraded(x0, guess, refs, &modes, cfg, params),
    };
    let (lo, hi) = cfg.bounds(params);
    let ubar: Vec<InputVector> = guess.inputs.iter().map(|u| u.to_vector()).collect();
    // Prediction with δu = 0.
    let base: Vec<StateVector> = (0..=k).map(|i| lin.xbar[i] + lin.free[i]).collect();

    // Sensitivities S[i][j] = ∂x_i/∂u_j for j < i.
    let mut s: Vec<Vec<InputMatrix>> = vec![Vec::new()];
    for i in 0..k {
        let mut row: Vec<InputMatrix> = s[i].iter().map(|m| lin.a[i] * m).collect();
        row.push(lin.b[i]);
        s.push(row);
    }

    let qd = cfg.state_weights();
    let qu = InputVector::from(cfg.q_input);
    let mut h = DMatrix::<f64>::zeros(nu, nu);
    let mut g = DVector::<f64>::zeros(nu);
    for i in 1..=k {
        let e = state_error(&base[i], &refs[i].state, &base[i]);
        let qe = e.component_mul(&qd);
        let weighted: Vec<InputMatrix> = s[i]
            .iter()
            .map(|m| {
                let mut w = *m;
                for r in 0..STATE_DIM {
                    w.row_mut(r).scale_mut(qd[r]);
                }
                w
            })
            .collect();
        for j in 0..i {
            let gj = s[i][j].transpose() * qe;
            for c in 0..INPUT_DIM {
                g[INPUT_DIM * j + c] += gj[c];
            }
            for l in 0..=j {
                let block = s[i][l].transpose() * weighted[j];
                for r in 0..INPUT_DIM {
                    for c in 0..INPUT_DIM {
                        h[(INPUT_DIM * l + r, INPUT_DIM * j + c)] += block[(r, c)];
                    }
                }
            }
        }
    }
    for j in 0..k {
        let ut = ubar[j] - refs[j].input.to_vector();
        for c in 0..INPUT_DIM {
            let idx = INPUT_DIM * j + c;
            h[(idx, idx)] += qu[c];
            g[idx] += qu[c] * ut[c];
        }
    }
    // Mirror the upper triangle and add a tiny ridge for zero weights.
    for r in 0..nu {
        for c in 0..r {
            h[(r, c)] = h[(c, r)];
        }
        h[(r, r)] += 1e-9;
    }

    let mut boxed = QpProblem::new(h, g);
    for j in 0..k {
        for c in 0..INPUT_DIM {
            let idx = INPUT_DIM * j + c;
            let mut e = DVector::zeros(nu);
            e[idx] = 1.0;
            boxed.push_ge(e.clone(), lo[c] - ubar[j][c]);
            boxed.push_ge(-e, ubar[j][c] - hi[c]);
        }
        if cfg.zero_net_tilt {
            let mut e = DVector::zeros(nu);
            e[INPUT_DIM * j + 2] = 1.0;
            e[INPUT_DIM * j + 3] = 1.0;
            boxed.push_eq(e, -(ubar[j][2] + ubar[j][3]));
        }
    }

    // Linearized normal forces: value + row·δU ≥ margin, one row per wheel.
    let mut normal_rows: Vec<(usize, usize, DVector<f64>, f64)> = Vec::new();
    if cfg.normal_constraints {
        for i in 0..k {
            if !modes[i].is_ground() {
                continue;
            }
            let nl = linearize_normals(&lin.xbar[i], &ubar[i], modes[i], params);
            for w in 0..2 {
                let mut row = DVector::zeros(nu);
                for j in 0..i {
                    let sens = nl.dx[w] * s[i][j];
                    for c in 0..INPUT_DIM {
                        row[INPUT_DIM * j + c] += sens[c];
                    }
                }
                for c in 0..INPUT_DIM {
                    row[INPUT_DIM * i + c] += nl.du[w][c];
                }
                let value = nl.value[w] + (nl.dx[w] * lin.free[i])[0];
                normal_rows.push((i, w, row, value));
            }
        }
    }

    let opts = QpOptions {
        feasibility_tol: cfg.feasibility_tol,
        max_iterations: cfg.max_qp_iterations,
    };
    let mut hard = boxed.clone();
    for (_, _, row, value) in &normal_rows {
        hard.push_ge(row.clone(), cfg.normal_margin - value);
    }
    let (du, slack, status, kkt, iterations) = match hard.solve(&opts) {
        Ok(sol) => {
            let kkt = hard.kkt_residual(&sol);
            (sol.z, vec![0.0; normal_rows.len()], QpStatus::Optimal, kkt, sol.iterations)
        }
        Err(_) if !normal_rows.is_empty() => match solve_relaxed(&boxed, &normal_rows, cfg, &opts) {
            Some(r) => r,
            None => return degraded(x0, guess, refs, &modes, cfg, params),
        },
        Err(_) => return degraded(x0, guess, refs, &modes, cfg, params),
    };

    let inputs: Vec<ControlInput> = (0..k)
        .map(|j| {
            let mut u = ubar[j] + du.fixed_rows::<INPUT_DIM>(INPUT_DIM * j);
            for c in 0..INPUT_DIM {
                u[c] = u[c].clamp(lo[c], hi[c]);
            }
            ControlInput::from_vector(&u)
        })
        .collect();
    let states: Vec<RobotState> = (0..=k)
        .map(|i| {
            let mut x = base[i];
            for j in 0..i {
                x += s[i][j] * du.fixed_rows::<INPUT_DIM>(INPUT_DIM * j);
            }
            RobotState::from_vector(&x)
        })
        .collect();
    let mut normals = vec![None; k];
    let mut slacks = vec![0.0; k];
    for (r, (i, w, row, value)) in normal_rows.iter().enumerate() {
        let predicted = value + row.dot(&du);
        let entry = normals[*i].get_or_insert((0.0, 0.0));
        if *w == 0 {
            entry.0 = predicted;
        } else {
            entry.1 = predicted;
        }
        slacks[*i] = f64::max(slacks[*i], slack[r]);
    }
    let cost = tracking_cost(&states, &inputs, refs, cfg);
    OcpSolution {
        inputs,
        states,
        modes,
        normals,
        slacks,
        status,
        cost,
        kkt_residual: kkt,
        qp_iterations: iterations,
    }
}

type QpOutcome = (DVector<f64>, Vec<f64>, QpStatus, f64, usize);

/// Normal-force rows softened by non-negative slacks with an L1 penalty
/// (plus a small quadratic term to keep the Hessian definite).
fn solve_relaxed(
    boxed: &QpProblem,
    normal_rows: &[(usize, usize, DVector<f64>, f64)],
    cfg: &NmpcConfig,
    opts: &QpOptions,
) -> Option<QpOutcome> {
    let nu = boxed.dim();
    let ns = normal_rows.len();
    let n = nu + ns;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (nu, nu)).copy_from(&boxed.h);
    let mut g = DVector::zeros(n);
    g.rows_mut(0, nu).copy_from(&boxed.g);
    for i in nu..n {
        h[(i, i)] = 1e-6;
        g[i] = cfg.slack_penalty;
    }
    let mut soft = QpProblem::new(h, g);
    for c in &boxed.constraints {
        let a = c.a.clone().resize_vertically(n, 0.0);
        if c.equality {
            soft.push_eq(a, c.b);
        } else {
            soft.push_ge(a, c.b);
        }
    }
    for (r, (_, _, row, value)) in normal_rows.iter().enumerate() {
        let mut a = row.clone().resize_vertically(n, 0.0);
        a[nu + r] = 1.0;
        soft.push_ge(a, cfg.normal_margin - value);
        let mut e = DVector::zeros(n);
        e[nu + r] = 1.0;
        soft.push_ge(e, 0.0);
    }
    let sol = soft.solve(opts).ok()?;
    let kkt = soft.kkt_residual(&sol);
    let slack = sol.z.rows(nu, ns).iter().copied().collect();
    Some((sol.z.rows(0, nu).into_owned(), slack, QpStatus::Relaxed, kkt, sol.iterations))
}

fn degraded(
    x0: &RobotState,
    guess: &WarmStart,
    refs: &[ReferencePoint],
    modes: &[Mode],
    cfg: &NmpcConfig,
    params: &VehicleParams,
) -> OcpSolution {
    let states = rollout(x0, &guess.inputs, modes, cfg, params).unwrap_or_else(|_| guess.states.clone());
    let normals = states
        .iter()
        .zip(&guess.inputs)
        .zip(modes)
        .map(|((x, u), &m)| if m.is_ground() { wheel_normals(x, u, m, params) } else { None })
        .collect();
    OcpSolution {
        cost: tracking_cost(&states, &guess.inputs, refs, cfg),
        inputs: guess.inputs.clone(),
        states,
        modes: modes.to_vec(),
        normals,
        slacks: vec![0.0; guess.horizon()],
        status: QpStatus::Degraded,
        kkt_residual: f64::NAN,
        qp_iterations: 0,
    }
}

/// Solves the tracking OCP from `x_current` over `refs` (K+1 points).
///
/// The model is linearized about the warm start, or about the references
/// when there is none (cold start). Guess inputs are clamped into the input
/// box first. If no QP can be solved the guess is returned with
/// [`QpStatus::Degraded`].
pub fn solve(
    x_current: &RobotState,
    refs: &[ReferencePoint],
    cfg: &NmpcConfig,
    params: &VehicleParams,
    warm_start: Option<&WarmStart>,
) -> Result<OcpSolution, NmpcError> {
    cfg.validate()?;
    let k = cfg.horizon;
    if refs.len() != k + 1 {
        return Err(NmpcError::Horizon {
            expected: k + 1,
            got: refs.len(),
        });
    }
    if !x_current.is_finite() {
        return Err(NmpcError::NonFinite);
    }
    let (lo, hi) = cfg.bounds(params);
    let mut guess = match warm_start {
        Some(w) if w.horizon() == k && w.states.len() == k + 1 => w.clone(),
        _ => WarmStart::from_references(refs),
    };
    for u in guess.inputs.iter_mut() {
        let mut v = u.to_vector();
        for c in 0..INPUT_DIM {
            v[c] = v[c].clamp(lo[c], hi[c]);
        }
        if cfg.zero_net_tilt {
            let mean = 0.5 * (v[2] - v[3]);
            v[2] = mean;
            v[3] = -mean;
        }
        *u = ControlInput::from_vector(&v);
    }
    let mut sol = rti_pass(x_current, refs, cfg, params, &guess);
    for _ in 1..cfg.sqp_iterations {
        if sol.status == QpStatus::Degraded {
            break;
        }
        let next = rti_pass(x_current, refs, cfg, params, &WarmStart::from_solution(&sol));
        let change = next
            .inputs
            .iter()
            .zip(&sol.inputs)
            .map(|(a, b)| (a.to_vector() - b.to_vector()).amax())
            .fold(0.0, f64::max);
        sol = next;
        if change < 1e-9 {
            break;
        }
    }
    Ok(sol)
}

/// Stateful controller that carries the warm start between ticks.
#[derive(Debug, Clone)]
pub struct Nmpc {
    pub config: NmpcConfig,
    pub params: VehicleParams,
    warm: Option<WarmStart>,
    /// Reuse the previous solution as the linearization guess.
    pub warm_starting: bool,
}

impl Nmpc {
    pub fn new(config: NmpcConfig, params: VehicleParams) -> Result<Self, NmpcError> {
        config.validate()?;
        Ok(Self {
            config,
            params,
            warm: None,
            warm_starting: true,
        })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Solves from `x`; the stored warm start is advanced by `elapsed`
    /// seconds before use.
    pub fn solve(&mut self, x: &RobotState, refs: &[ReferencePoint], elapsed: f64) -> Result<OcpSolution, NmpcError> {
        let warm = match (&self.warm, self.warm_starting) {
            (Some(w), true) => Some(w.advance(elapsed / self.config.dt)),
            _ => None,
        };
        let sol = solve(x, refs, &self.config, &self.params, warm.as_ref())?;
        self.warm = Some(WarmStart::from_solution(&sol));
        Ok(sol)
    }
}

#[cfg(test)]
mod tests;
