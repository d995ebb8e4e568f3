use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Nmpc, NmpcConfig, NmpcError, QpStatus};
use crate::dynamics::{DynamicsError, SimEvent, Simulator};
use crate::flatness::ReferencePoint;
use crate::rotation::Orientation;
use crate::state::{ControlInput, Mode, RobotState};
use crate::trajectory::{sample_references, HybridTrajectory};
use crate::Vec3;

/// Predicted normals below this count as a constraint violation.
const NORMAL_VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("sim rate {sim} Hz is not an integer multiple of control rate {control} Hz")]
    Rates { control: f64, sim: f64 },
    #[error(transparent)]
    Nmpc(#[from] NmpcError),
    #[error("invalid noise setting: {0}")]
    Noise(String),
}

/// Zero-mean Gaussian noise on the state fed to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Position standard deviation [m].
    pub position_std: f64,
    /// Attitude standard deviation per axis [rad].
    pub attitude_std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            position_std: 0.0,
            attitude_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub control_rate: f64,
    pub sim_rate: f64,
    pub noise: Option<NoiseConfig>,
    /// Record wall-clock solve times; otherwise they are logged as zero so
    /// that logs are reproducible.
    pub measure_time: bool,
    /// Run length; the trajectory duration when absent.
    pub t_end: Option<f64>,
    /// Clamp reference inputs to the actuator box instead of aborting.
    pub clamp_references: bool,
    pub warm_start: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            control_rate: 200.0,
            sim_rate: 1000.0,
            noise: None,
            measure_time: false,
            t_end: None,
            clamp_references: true,
            warm_start: true,
        }
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub reference: ReferencePoint,
    /// True plant state at the tick.
    pub state: RobotState,
    pub mode: Mode,
    pub input: ControlInput,
    pub status: QpStatus,
    pub cost: f64,
    pub slack_max: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    pub solve_time_us: u64,
    /// Mean ideal rotor power over the control period [W].
    pub power: f64,
    /// Lateral slip occurred during the period.
    pub slipping: bool,
    /// A predicted normal force fell below zero or the QP was relaxed.
    pub constraint_violation: bool,
    pub event: Option<SimEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Too many consecutive degraded solves.
    SolverFailure { t: f64, ticks: usize },
    Diverged { t: f64 },
    InfeasibleReference { t: f64, message: String },
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub ticks: Vec<TickRecord>,
    pub outcome: RunOutcome,
    pub control_period: f64,
    pub sim_period: f64,
}

struct StateNoise {
    rng: ChaCha8Rng,
    position: Option<Normal<f64>>,
    attitude: Option<Normal<f64>>,
}

impl StateNoise {
    fn new(cfg: &NoiseConfig) -> Result<Self, ControlError> {
        let make = |std: f64| -> Result<Option<Normal<f64>>, ControlError> {
            if std == 0.0 {
                Ok(None)
            } else {
                Normal::new(0.0, std)
                    .map(Some)
                    .map_err(|e| ControlError::Noise(e.to_string()))
            }
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            position: make(cfg.position_std)?,
            attitude: make(cfg.attitude_std)?,
        })
    }

    fn apply(&mut self, x: &RobotState) -> RobotState {
        let mut out = *x;
        if let Some(n) = self.position {
            out.position += Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
        }
        if let Some(n) = self.attitude {
            let rv = Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
            let dq = nalgebra::UnitQuaternion::from_scaled_axis(rv);
            out.orientation = Orientation::from_unit(x.orientation.unit() * dq);
        }
        out
    }
}

/// Closed-loop run: the controller samples K+1 references at each control
/// tick, solves, and its first input is held over the simulator sub-steps.
pub fn control_loop(
    sim: &mut Simulator,
    traj: &HybridTrajectory,
    cfg: &NmpcConfig,
    lc: &LoopConfig,
) -> Result<RunLog, ControlError> {
    let ratio = lc.sim_rate / lc.control_rate;
    let substeps = ratio.round() as usize;
    if !(lc.control_rate > 0.0) || substeps < 1 || (ratio - substeps as f64).abs() > 1e-9 {
        return Err(ControlError::Rates {
            control: lc.control_rate,
            sim: lc.sim_rate,
        });
    }
    let params = sim.params;
    sim.dt = 1.0 / lc.sim_rate;
    let mut controller = Nmpc::new(cfg.clone(), params)?;
    controller.warm_starting = lc.warm_start;
    let mut noise = lc.noise.map(|n| StateNoise::new(&n)).transpose()?;
    let period = 1.0 / lc.control_rate;
    let t_end = lc.t_end.unwrap_or_else(|| traj.duration());
    let n_ticks = (t_end / period).round() as usize;
    let mut ticks = Vec::with_capacity(n_ticks);
    let mut degraded_run = 0;
    let mut outcome = RunOutcome::Completed;
    let t0 = sim.time();

    for tick in 0..n_ticks {
        let t = tick as f64 * period;
        let refs = match sample_references(traj, t, cfg.horizon, cfg.dt, &params, lc.clamp_references) {
            Ok(r) => r,
            Err(e) => {
                outcome = RunOutcome::InfeasibleReference {
                    t,
                    message: e.to_string(),
                };
                break;
            }
        };
        let truth = *sim.state();
        let measured = match noise.as_mut() {
            Some(n) => n.apply(&truth),
            None => truth,
        };
        let started = Instant::now();
        let sol = controller.solve(&measured, &refs, period)?;
        let solve_time_us = if lc.measure_time {
            started.elapsed().as_micros() as u64
        } else {
            0
        };
        if sol.status == QpStatus::Degraded {
            degraded_run += 1;
        } else {
            degraded_run = 0;
        }
        let u = sol.first_input();
        let mode = sim.mode();
        let mut power = 0.0;
        let mut slipping = false;
        let mut event = None;
        let mut failure = None;
        for _ in 0..substeps {
            match sim.step(&u) {
                Ok(rec) => {
                    power += rec.power;
                    slipping |= rec.slipping();
                    event = event.or(rec.event);
                }
                Err(DynamicsError::Divergence { t, .. }) => {
                    failure = Some(t - t0);
                    break;
                }
                Err(_) => {
                    failure = Some(sim.time() - t0);
                    break;
                }
            }
        }
        let violation = sol.status != QpStatus::Optimal
            || sol
                .normals
                .iter()
                .flatten()
                .any(|&(l, r)| l.min(r) < -NORMAL_VIOLATION_TOL);
        ticks.push(TickRecord {
            t,
            reference: refs[0],
            state: truth,
            mode,
            input: u,
            status: sol.status,
            cost: sol.cost,
            slack_max: sol.max_slack(),
            kkt_residual: sol.kkt_residual,
            qp_iterations: sol.qp_iterations,
            solve_time_us,
            power: power / substeps as f64,
            slipping,
            constraint_violation: violation,
            event,
        });
        if let Some(t) = failure {
            outcome = RunOutcome::Diverged { t };
            break;
        }
        if degraded_run > cfg.max_degraded_ticks {
            outcome = RunOutcome::SolverFailure { t, ticks: degraded_run };
            break;
        }
    }
    Ok(RunLog {
        ticks,
        outcome,
        control_period: period,
        sim_period: 1.0 / lc.sim_rate,
    })
}

impl RunLog {
    pub fn positions(&self) -> (Vec<Vec3>, Vec<Vec3>) {
        self.ticks
            .iter()
            .map(|r| (r.state.position, r.reference.state.position))
            .unzip()
    }

    pub fn mean_power(&self) -> Option<f64> {
        if self.ticks.is_empty() {
            None
        } else {
            Some(self.ticks.iter().map(|r| r.power).sum::<f64>() / self.ticks.len() as f64)
        }
    }

    pub fn any_constraint_violation(&self) -> bool {
        self.ticks.iter().any(|r| r.constraint_violation)
    }
}
