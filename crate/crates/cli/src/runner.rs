//! Scenario execution and result files.

use std::path::{Path, PathBuf};

use bicopter_core::analysis::{
    hover_efficiency, layout_table, steering_ratio, AnalysisError, ExperimentMetrics, WidthReport,
};
use bicopter_core::dynamics::{ContactModel, Simulator};
use bicopter_core::nmpc::{control_loop, ControlError, LoopConfig, NmpcConfig, QpStatus, RunLog, RunOutcome, TickRecord};
use bicopter_core::trajectory::{GroundThrust, HybridTrajectory, ModeAnnotation, TrajectorySegment};
use bicopter_core::{Direction, Vec3, VehicleParams};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, ScenarioKind};
use crate::error::CliError;
use crate::output::{rows_from_log, summarize, write_rows_file, LogRow, RunSummary};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub log: RunLog,
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
}

impl RunResult {
    /// Maps an aborted run to the matching error.
    pub fn failure(&self) -> Option<CliError> {
        let label = &self.summary.label;
        match &self.log.outcome {
            RunOutcome::Completed => None,
            RunOutcome::SolverFailure { .. } => Some(CliError::Solver(format!("{label}: {}", self.summary.outcome))),
            RunOutcome::Diverged { .. } => Some(CliError::Divergence(format!("{label}: {}", self.summary.outcome))),
            RunOutcome::InfeasibleReference { .. } => {
                Some(CliError::InfeasibleReference(format!("{label}: {}", self.summary.outcome)))
            }
        }
    }
}

fn control_error(e: ControlError) -> CliError {
    match e {
        ControlError::Rates { .. } | ControlError::Noise(_) => CliError::Config(e.to_string()),
        ControlError::Nmpc(e) => CliError::Solver(e.to_string()),
    }
}

fn initial_state(traj: &HybridTrajectory, params: &VehicleParams) -> Result<bicopter_core::RobotState, CliError> {
    traj.reference(0.0, params, true)
        .map(|r| r.state)
        .map_err(|e| CliError::InfeasibleReference(format!("t = 0: {e}")))
}

/// One NMPC closed-loop run starting on the reference.
pub fn run_closed_loop(
    label: &str,
    traj: &HybridTrajectory,
    params: &VehicleParams,
    contact: ContactModel,
    controller: &NmpcConfig,
    lc: &LoopConfig,
    lateral_threshold: Option<f64>,
) -> Result<RunResult, CliError> {
    let mut sim = Simulator::new(*params, contact, 1.0 / lc.sim_rate, initial_state(traj, params)?);
    let log = control_loop(&mut sim, traj, controller, lc).map_err(control_error)?;
    let rows = rows_from_log(&log);
    let summary = summarize(label, &log.outcome, &rows, Some(traj.peaks()), lateral_threshold);
    info!("{label}: {} rmse_2d {:.4} m", summary.outcome, summary.rmse_2d);
    Ok(RunResult { log, rows, summary })
}

/// Feeds the flatness inputs open loop, held over each control period.
pub fn run_open_loop(
    label: &str,
    traj: &HybridTrajectory,
    params: &VehicleParams,
    contact: ContactModel,
    lc: &LoopConfig,
) -> Result<RunResult, CliError> {
    let substeps = (lc.sim_rate / lc.control_rate).round().max(1.0) as usize;
    let period = 1.0 / lc.control_rate;
    let mut sim = Simulator::new(*params, contact, period / substeps as f64, initial_state(traj, params)?);
    let t_end = lc.t_end.unwrap_or_else(|| traj.duration());
    let n = (t_end / period).round() as usize;
    let mut ticks = Vec::with_capacity(n);
    let mut outcome = RunOutcome::Completed;
    for k in 0..n {
        let t = k as f64 * period;
        let reference = match traj.reference(t, params, true) {
            Ok(r) => r,
            Err(e) => {
                outcome = RunOutcome::InfeasibleReference { t, message: e.to_string() };
                break;
            }
        };
        let state = *sim.state();
        let mode = sim.mode();
        let (mut power, mut slipping, mut event) = (0.0, false, None);
        let mut diverged = false;
        for _ in 0..substeps {
            match sim.step(&reference.input) {
                Ok(rec) => {
                    power += rec.power;
                    slipping |= rec.slipping();
                    event = event.or(rec.event);
                }
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }
        ticks.push(TickRecord {
            t,
            reference,
            state,
            mode,
            input: reference.input,
            status: QpStatus::Optimal,
            cost: 0.0,
            slack_max: 0.0,
            kkt_residual: 0.0,
            qp_iterations: 0,
            solve_time_us: 0,
            power: power / substeps as f64,
            slipping,
            constraint_violation: false,
            event,
        });
        if diverged {
            outcome = RunOutcome::Diverged { t };
            break;
        }
    }
    let log = RunLog {
        ticks,
        outcome,
        control_period: period,
        sim_period: period / substeps as f64,
    };
    let rows = rows_from_log(&log);
    let summary = summarize(label, &log.outcome, &rows, Some(traj.peaks()), None);
    Ok(RunResult { log, rows, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub metrics: ExperimentMetrics,
    /// Ground over aerial net power, the inverse of the endurance gain.
    pub power_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyResult {
    pub aerial: RunResult,
    pub ground: RunResult,
    pub report: EnergyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub variant: String,
    pub v_max: f64,
    pub a_max: f64,
    pub outcome: String,
    /// Completed without crossing the lateral threshold.
    pub finished: bool,
    pub rmse_2d: f64,
    pub max_lateral_error: f64,
    pub lateral_failure_time: Option<f64>,
    pub slipping_ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub lateral_threshold: f64,
    pub rows: Vec<BenchmarkRow>,
    /// Lowest tested speed at which each variant failed.
    pub full_failure_speed: Option<f64>,
    pub ablation_failure_speed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub runs: Vec<RunResult>,
    pub report: BenchmarkReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringRow {
    pub torque_to_thrust: f64,
    pub steering_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthResult {
    pub mass: f64,
    pub hover_efficiency: f64,
    pub widths: Vec<WidthReport>,
    pub vehicle_steering_ratio: f64,
    pub steering: Vec<SteeringRow>,
}

#[derive(Debug, Clone)]
pub enum ScenarioResult {
    Track(RunResult),
    Energy(EnergyResult),
    Benchmark(BenchmarkResult),
    Width(WidthResult),
}

impl ScenarioResult {
    /// First aborted run, for scenarios whose runs are all expected to finish.
    pub fn failure(&self) -> Option<CliError> {
        match self {
            ScenarioResult::Track(r) => r.failure(),
            ScenarioResult::Energy(e) => e.aerial.failure().or_else(|| e.ground.failure()),
            // Failing variants are the point of the benchmark.
            ScenarioResult::Benchmark(_) | ScenarioResult::Width(_) => None,
        }
    }
}

fn analysis_error(e: AnalysisError) -> CliError {
    CliError::Config(e.to_string())
}

/// Matched aerial and ground figure-eights.
pub fn energy_trajectories(cfg: &ScenarioConfig) -> Result<(HybridTrajectory, HybridTrajectory), CliError> {
    let e = cfg
        .energy
        .ok_or_else(|| CliError::Config("missing [energy] block".into()))?;
    let p = cfg.params()?;
    let make = |z: f64, mode| {
        let seg = TrajectorySegment::lemniscate_for_limits(e.aspect, e.v_max, e.a_max, Vec3::new(0.0, 0.0, z), mode);
        HybridTrajectory::from_segments(vec![seg], cfg.trajectory.ground_thrust, &p, cfg.trajectory.initial_yaw)
            .map_err(|err| CliError::Config(format!("energy trajectory: {err}")))
    };
    Ok((
        make(e.aerial_altitude, ModeAnnotation::Aerial)?,
        make(p.contact_height(), ModeAnnotation::Ground(Direction::Forward))?,
    ))
}

pub fn run_energy(cfg: &ScenarioConfig) -> Result<EnergyResult, CliError> {
    let p = cfg.params()?;
    let standby = cfg.energy.map_or(0.0, |e| e.standby_power);
    let (aerial_traj, ground_traj) = energy_trajectories(cfg)?;
    let lc = cfg.loop_config();
    let aerial = run_closed_loop("aerial", &aerial_traj, &p, cfg.contact(), &cfg.controller, &lc, None)?;
    let ground = run_closed_loop("ground", &ground_traj, &p, cfg.contact(), &cfg.controller, &lc, None)?;
    let metrics = ExperimentMetrics::new(
        ground.summary.rmse_2d,
        Some(aerial.summary.mean_power),
        Some(ground.summary.mean_power),
        standby,
    )
    .map_err(analysis_error)?;
    let power_ratio = match (metrics.power_ground, metrics.power_aerial) {
        (Some(g), Some(a)) => g / a,
        _ => f64::NAN,
    };
    Ok(EnergyResult {
        aerial,
        ground,
        report: EnergyReport { metrics, power_ratio },
    })
}

/// Ground figure-eight at the given limits.
pub fn benchmark_trajectory(
    aspect: f64,
    v_max: f64,
    a_max: f64,
    thrust: GroundThrust,
    params: &VehicleParams,
) -> Result<HybridTrajectory, CliError> {
    let seg = TrajectorySegment::lemniscate_for_limits(
        aspect,
        v_max,
        a_max,
        Vec3::new(0.0, 0.0, params.contact_height()),
        ModeAnnotation::Ground(Direction::Forward),
    );
    HybridTrajectory::from_segments(vec![seg], thrust, params, 0.0)
        .map_err(|e| CliError::Config(format!("benchmark trajectory: {e}")))
}

pub fn benchmark_variant_label(ablation: bool, v_max: f64) -> String {
    format!("{}_v{v_max:.2}", if ablation { "ablation" } else { "full" })
}

pub fn run_benchmark(cfg: &ScenarioConfig) -> Result<BenchmarkResult, CliError> {
    let b = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [benchmark] block".into()))?;
    let p = cfg.params()?;
    let lc = cfg.loop_config();
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &[v_max, a_max] in &b.speeds {
        let traj = benchmark_trajectory(b.aspect, v_max, a_max, cfg.trajectory.ground_thrust, &p)?;
        for ablation in [false, true] {
            let controller = NmpcConfig {
                zero_net_tilt: ablation,
                ..cfg.controller.clone()
            };
            let label = benchmark_variant_label(ablation, v_max);
            let run = run_closed_loop(&label, &traj, &p, cfg.contact(), &controller, &lc, Some(b.lateral_threshold))?;
            let s = &run.summary;
            rows.push(BenchmarkRow {
                variant: if ablation { "ablation" } else { "full" }.into(),
                v_max,
                a_max,
                outcome: s.outcome.clone(),
                finished: s.completed && s.lateral_failure_time.is_none(),
                rmse_2d: s.rmse_2d,
                max_lateral_error: s.max_lateral_error,
                lateral_failure_time: s.lateral_failure_time,
                slipping_ticks: s.slipping_ticks,
            });
            runs.push(run);
        }
    }
    let first_failure = |variant: &str| {
        rows.iter()
            .find(|r| r.variant == variant && !r.finished)
            .map(|r| r.v_max)
    };
    let report = BenchmarkReport {
        lateral_threshold: b.lateral_threshold,
        full_failure_speed: first_failure("full"),
        ablation_failure_speed: first_failure("ablation"),
        rows,
    };
    Ok(BenchmarkResult { runs, report })
}

pub fn run_width(cfg: &ScenarioConfig) -> Result<WidthResult, CliError> {
    let w = cfg
        .width
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [width] block".into()))?;
    let p = cfg.params()?;
    let mass = w.mass.unwrap_or(p.mass);
    let area = std::f64::consts::PI * w.rotor_radius * w.rotor_radius;
    let eta = hover_efficiency(mass, 2, area, p.air_density).map_err(analysis_error)?;
    let widths = layout_table(mass, eta, p.air_density, w.clearance).map_err(analysis_error)?;
    let steering = w
        .torque_ratios
        .iter()
        .map(|&r| {
            let mut q = p;
            q.torque_coeff = r * q.thrust_coeff;
            SteeringRow {
                torque_to_thrust: r,
                steering_ratio: steering_ratio(&q),
            }
        })
        .collect();
    Ok(WidthResult {
        mass,
        hover_efficiency: eta,
        widths,
        vehicle_steering_ratio: steering_ratio(&p),
        steering,
    })
}

/// Closed-loop tracking of the configured trajectory.
pub fn run_track(cfg: &ScenarioConfig) -> Result<RunResult, CliError> {
    let traj = cfg.build_trajectory()?;
    let p = cfg.params()?;
    run_closed_loop(&cfg.name, &traj, &p, cfg.contact(), &cfg.controller, &cfg.loop_config(), None)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, CliError> {
    Ok(match cfg.kind {
        ScenarioKind::Track => ScenarioResult::Track(run_track(cfg)?),
        ScenarioKind::EnergyCompare => ScenarioResult::Energy(run_energy(cfg)?),
        ScenarioKind::Benchmark => ScenarioResult::Benchmark(run_benchmark(cfg)?),
        ScenarioKind::WidthReport => ScenarioResult::Width(run_width(cfg)?),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for item in items {
        w.serialize(item)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct WidthCsvRow {
    layout: &'static str,
    rotors: u32,
    clearance: f64,
    rotor_radius: f64,
    width: f64,
    ratio: f64,
}

/// Writes the result files of a scenario into `dir` and returns their paths.
pub fn write_result(result: &ScenarioResult, cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let name = &cfg.name;
    let decimation = cfg.output.decimation;
    let mut written = Vec::new();
    let mut rows_file = |suffix: &str, rows: &[LogRow]| -> Result<(), CliError> {
        let path = dir.join(format!("{name}{suffix}.csv"));
        write_rows_file(&path, rows, decimation)?;
        written.push(path);
        Ok(())
    };
    let summary_path = dir.join(format!("{name}_summary.json"));
    match result {
        ScenarioResult::Track(r) => {
            rows_file("", &r.rows)?;
            write_json(&summary_path, &r.summary)?;
        }
        ScenarioResult::Energy(e) => {
            rows_file("_aerial", &e.aerial.rows)?;
            rows_file("_ground", &e.ground.rows)?;
            #[derive(Serialize)]
            struct EnergySummary<'a> {
                aerial: &'a RunSummary,
                ground: &'a RunSummary,
                energy: &'a EnergyReport,
            }
            write_json(
                &summary_path,
                &EnergySummary {
                    aerial: &e.aerial.summary,
                    ground: &e.ground.summary,
                    energy: &e.report,
                },
            )?;
        }
        ScenarioResult::Benchmark(b) => {
            for run in &b.runs {
                rows_file(&format!("_{}", run.summary.label), &run.rows)?;
            }
            let report = dir.join(format!("{name}_report.csv"));
            write_csv(&report, &b.report.rows)?;
            written.push(report);
            write_json(&summary_path, &b.report)?;
        }
        ScenarioResult::Width(w) => {
            let widths: Vec<WidthCsvRow> = w
                .widths
                .iter()
                .map(|r| WidthCsvRow {
                    layout: r.layout.kind.label(),
                    rotors: r.layout.rotors(),
                    clearance: r.layout.clearance,
                    rotor_radius: r.rotor_radius,
                    width: r.width,
                    ratio: r.ratio,
                })
                .collect();
            let path = dir.join(format!("{name}_widths.csv"));
            write_csv(&path, &widths)?;
            written.push(path);
            let path = dir.join(format!("{name}_steering.csv"));
            write_csv(&path, &w.steering)?;
            written.push(path);
            write_json(&summary_path, w)?;
        }
    }
    written.push(summary_path);
    Ok(written)
}

/// Human-readable digest of a result.
pub fn describe(result: &ScenarioResult) -> String {
    let line = |s: &RunSummary| {
        format!(
            "{:<16} {:<12} rmse_2d {:.4} m  max lateral {:.3} m  mean power {:.2} W  relaxed {} degraded {}",
            s.label,
            if s.completed { "completed" } else { "aborted" },
            s.rmse_2d,
            s.max_lateral_error,
            s.mean_power,
            s.relaxed_ticks,
            s.degraded_ticks
        )
    };
    match result {
        ScenarioResult::Track(r) => line(&r.summary),
        ScenarioResult::Energy(e) => format!(
            "{}\n{}\nenergy saving {:.3} (ground/aerial power {:.3})",
            line(&e.aerial.summary),
            line(&e.ground.summary),
            e.report.metrics.energy_saving.unwrap_or(f64::NAN),
            e.report.power_ratio
        ),
        ScenarioResult::Benchmark(b) => {
            let mut out = format!("{:<10} {:>6} {:>6} {:>9} {:>8} {:>9}\n", "variant", "v_max", "a_max", "finished", "rmse_2d", "lat_max");
            for r in &b.report.rows {
                out += &format!(
                    "{:<10} {:>6.2} {:>6.2} {:>9} {:>8.4} {:>9.3}\n",
                    r.variant, r.v_max, r.a_max, r.finished, r.rmse_2d, r.max_lateral_error
                );
            }
            let speed = |s: Option<f64>| s.map_or("none".to_string(), |v| format!("{v:.2} m/s"));
            out += &format!(
                "first failure: full {}, ablation {}",
                speed(b.report.full_failure_speed),
                speed(b.report.ablation_failure_speed)
            );
            out
        }
        ScenarioResult::Width(w) => {
            let mut out = format!("{:<22} {:>6} {:>10} {:>10} {:>7}\n", "layout", "rotors", "radius_m", "width_m", "ratio");
            for r in &w.widths {
                out += &format!(
                    "{:<22} {:>6} {:>10.4} {:>10.4} {:>7.3}\n",
                    r.layout.kind.label(),
                    r.layout.rotors(),
                    r.rotor_radius,
                    r.width,
                    r.ratio
                );
            }
            out += &format!("vehicle steering ratio {:.3}", w.vehicle_steering_ratio);
            for s in &w.steering {
                out += &format!("\n  c_q/c_t {:.4} -> steering ratio {:.3}", s.torque_to_thrust, s.steering_ratio);
            }
            out
        }
    }
}
