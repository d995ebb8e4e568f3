//! Per-tick CSV rows, run summaries and the long-format export.
//!
//! Run CSV columns, in order:
//! `t, mode, ref_x, ref_y, ref_z, ref_qw, ref_qx, ref_qy, ref_qz, ref_vx,
//! ref_vy, ref_vz, x, y, z, qw, qx, qy, qz, vx, vy, vz, thrust1, thrust2,
//! tilt1, tilt2, solve_time_us, qp_status, cost, slack_max, kkt_residual,
//! power, slipping, violation, event`.

use std::io::{Read, Write};
use std::path::Path;

use bicopter_core::analysis::{rmse, RmseDims};
use bicopter_core::dynamics::SimEvent;
use bicopter_core::nmpc::{QpStatus, RunLog, RunOutcome, TickRecord};
use bicopter_core::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub mode: String,
    pub ref_x: f64,
    pub ref_y: f64,
    pub ref_z: f64,
    pub ref_qw: f64,
    pub ref_qx: f64,
    pub ref_qy: f64,
    pub ref_qz: f64,
    pub ref_vx: f64,
    pub ref_vy: f64,
    pub ref_vz: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub thrust1: f64,
    pub thrust2: f64,
    pub tilt1: f64,
    pub tilt2: f64,
    pub solve_time_us: u64,
    pub qp_status: String,
    pub cost: f64,
    pub slack_max: f64,
    pub kkt_residual: f64,
    pub power: f64,
    pub slipping: bool,
    pub violation: bool,
    pub event: String,
}

impl LogRow {
    pub fn from_tick(r: &TickRecord) -> Self {
        let rq = r.reference.state.orientation.wxyz();
        let q = r.state.orientation.wxyz();
        let rp = r.reference.state.position;
        let rv = r.reference.state.velocity;
        let p = r.state.position;
        let v = r.state.velocity;
        Self {
            t: r.t,
            mode: r.mode.label().to_string(),
            ref_x: rp.x,
            ref_y: rp.y,
            ref_z: rp.z,
            ref_qw: rq[0],
            ref_qx: rq[1],
            ref_qy: rq[2],
            ref_qz: rq[3],
            ref_vx: rv.x,
            ref_vy: rv.y,
            ref_vz: rv.z,
            x: p.x,
            y: p.y,
            z: p.z,
            qw: q[0],
            qx: q[1],
            qy: q[2],
            qz: q[3],
            vx: v.x,
            vy: v.y,
            vz: v.z,
            thrust1: r.input.thrust1,
            thrust2: r.input.thrust2,
            tilt1: r.input.tilt1,
            tilt2: r.input.tilt2,
            solve_time_us: r.solve_time_us,
            qp_status: r.status.label().to_string(),
            cost: r.cost,
            slack_max: r.slack_max,
            kkt_residual: r.kkt_residual,
            power: r.power,
            slipping: r.slipping,
            violation: r.constraint_violation,
            event: match r.event {
                Some(SimEvent::Liftoff) => "liftoff".into(),
                Some(SimEvent::Touchdown) => "touchdown".into(),
                None => String::new(),
            },
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn reference_position(&self) -> Vec3 {
        Vec3::new(self.ref_x, self.ref_y, self.ref_z)
    }

    /// Tracking error along the horizontal left axis of the reference heading.
    pub fn lateral_error(&self) -> f64 {
        let (w, x, y, z) = (self.ref_qw, self.ref_qx, self.ref_qy, self.ref_qz);
        // Body x axis of the reference attitude, projected on the ground.
        let bx = Vec3::new(1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + w * z), 0.0);
        let heading = if bx.norm() > 1e-9 { bx.normalize() } else { Vec3::x() };
        let left = Vec3::new(-heading.y, heading.x, 0.0);
        (self.position() - self.reference_position()).dot(&left)
    }
}

pub fn rows_from_log(log: &RunLog) -> Vec<LogRow> {
    log.ticks.iter().map(LogRow::from_tick).collect()
}

pub fn outcome_label(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Completed => "completed".into(),
        RunOutcome::SolverFailure { t, ticks } => format!("solver_failure at t={t:.3} after {ticks} degraded ticks"),
        RunOutcome::Diverged { t } => format!("diverged at t={t:.3}"),
        RunOutcome::InfeasibleReference { t, message } => format!("infeasible_reference at t={t:.3}: {message}"),
    }
}

/// Summary of one run; every field except the design peaks and the
/// outcome is a function of the logged rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub outcome: String,
    pub completed: bool,
    pub ticks: usize,
    pub duration: f64,
    pub rmse_2d: f64,
    pub rmse_3d: f64,
    pub max_error: f64,
    pub max_lateral_error: f64,
    /// First time the lateral error exceeded the benchmark threshold.
    pub lateral_failure_time: Option<f64>,
    pub mean_power: f64,
    pub peak_reference_speed: f64,
    /// Peak speed and acceleration the trajectory was designed for, when known.
    pub design_peak_speed: Option<f64>,
    pub design_peak_accel: Option<f64>,
    pub relaxed_ticks: usize,
    pub degraded_ticks: usize,
    pub violation_ticks: usize,
    pub slipping_ticks: usize,
    pub mode_switches: usize,
    /// Largest thrust change between consecutive ticks across a mode switch [N].
    pub switch_thrust_jump: f64,
    /// Largest tilt change between consecutive ticks across a mode switch [rad].
    pub switch_tilt_jump: f64,
}

/// Row-derived part of a summary.
pub fn summarize(label: &str, outcome: &RunOutcome, rows: &[LogRow], design_peaks: Option<(f64, f64)>, lateral_threshold: Option<f64>) -> RunSummary {
    let actual: Vec<Vec3> = rows.iter().map(LogRow::position).collect();
    let reference: Vec<Vec3> = rows.iter().map(LogRow::reference_position).collect();
    let (rmse_2d, rmse_3d) = if rows.is_empty() {
        (0.0, 0.0)
    } else {
        (
            rmse(&actual, &reference, RmseDims::Planar).expect("equal lengths"),
            rmse(&actual, &reference, RmseDims::Spatial).expect("equal lengths"),
        )
    };
    let max_error = actual
        .iter()
        .zip(&reference)
        .map(|(a, r)| (a - r).norm())
        .fold(0.0, f64::max);
    let lateral: Vec<f64> = rows.iter().map(|r| r.lateral_error().abs()).collect();
    let max_lateral_error = lateral.iter().cloned().fold(0.0, f64::max);
    let lateral_failure_time =
        lateral_threshold.and_then(|th| rows.iter().zip(&lateral).find(|(_, &l)| l > th).map(|(r, _)| r.t));
    let n = rows.len().max(1) as f64;
    let count = |f: &dyn Fn(&LogRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let mut mode_switches = 0;
    let mut switch_thrust_jump: f64 = 0.0;
    let mut switch_tilt_jump: f64 = 0.0;
    for w in rows.windows(2) {
        if w[0].mode != w[1].mode {
            mode_switches += 1;
            switch_thrust_jump = switch_thrust_jump
                .max((w[1].thrust1 - w[0].thrust1).abs())
                .max((w[1].thrust2 - w[0].thrust2).abs());
            switch_tilt_jump = switch_tilt_jump
                .max((w[1].tilt1 - w[0].tilt1).abs())
                .max((w[1].tilt2 - w[0].tilt2).abs());
        }
    }
    RunSummary {
        label: label.to_string(),
        outcome: outcome_label(outcome),
        completed: outcome.is_completed(),
        ticks: rows.len(),
        duration: rows.last().map_or(0.0, |r| r.t),
        rmse_2d,
        rmse_3d,
        max_error,
        max_lateral_error,
        lateral_failure_time,
        mean_power: rows.iter().map(|r| r.power).sum::<f64>() / n,
        peak_reference_speed: rows
            .iter()
            .map(|r| Vec3::new(r.ref_vx, r.ref_vy, r.ref_vz).norm())
            .fold(0.0, f64::max),
        design_peak_speed: design_peaks.map(|p| p.0),
        design_peak_accel: design_peaks.map(|p| p.1),
        relaxed_ticks: count(&|r| r.qp_status == QpStatus::Relaxed.label()),
        degraded_ticks: count(&|r| r.qp_status == QpStatus::Degraded.label()),
        violation_ticks: count(&|r| r.violation),
        slipping_ticks: count(&|r| r.slipping),
        mode_switches,
        switch_thrust_jump,
        switch_tilt_jump,
    }
}

pub fn write_rows<W: Write>(w: W, rows: &[LogRow], decimation: usize) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(ROW_HEADER)?;
    for row in rows.iter().step_by(decimation.max(1)) {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(r: R) -> Result<Vec<LogRow>, CliError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(CliError::from)).collect()
}

pub fn write_rows_file(path: &Path, rows: &[LogRow], decimation: usize) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_rows(std::io::BufWriter::new(f), rows, decimation)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<LogRow>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    read_rows(std::io::BufReader::new(f))
}

pub const ROW_HEADER: [&str; 35] = [
    "t", "mode", "ref_x", "ref_y", "ref_z", "ref_qw", "ref_qx", "ref_qy", "ref_qz", "ref_vx", "ref_vy", "ref_vz",
    "x", "y", "z", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "thrust1", "thrust2", "tilt1", "tilt2",
    "solve_time_us", "qp_status", "cost", "slack_max", "kkt_residual", "power", "slipping", "violation", "event",
];

/// One `(series, t, value)` record of the long-format export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub series: String,
    pub t: f64,
    pub value: f64,
}

const MODES: [&str; 3] = ["aerial", "ground", "ground_reverse"];
const STATUSES: [QpStatus; 3] = [QpStatus::Optimal, QpStatus::Relaxed, QpStatus::Degraded];
const EVENTS: [&str; 3] = ["", "liftoff", "touchdown"];

fn code(options: &[&str], value: &str) -> f64 {
    options.iter().position(|o| *o == value).map_or(-1.0, |i| i as f64)
}

fn decode(options: &[&str], value: f64, series: &str) -> Result<String, CliError> {
    let i = value as usize;
    if value >= 0.0 && (i as f64) == value && i < options.len() {
        Ok(options[i].to_string())
    } else {
        Err(CliError::Other(format!("series `{series}` has unknown code {value}")))
    }
}

/// Numeric series of the long export, in column order.
pub const SERIES: [&str; 34] = [
    "mode_code", "ref_x", "ref_y", "ref_z", "ref_qw", "ref_qx", "ref_qy", "ref_qz", "ref_vx", "ref_vy",
    "ref_vz", "x", "y", "z", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "thrust1", "thrust2", "tilt1", "tilt2",
    "solve_time_us", "qp_status_code", "cost", "slack_max", "kkt_residual", "power", "slipping", "violation",
    "event_code",
];

fn numeric(row: &LogRow) -> [f64; 34] {
    let statuses: Vec<&str> = STATUSES.iter().map(|s| s.label()).collect();
    [
        code(&MODES, &row.mode),
        row.ref_x,
        row.ref_y,
        row.ref_z,
        row.ref_qw,
        row.ref_qx,
        row.ref_qy,
        row.ref_qz,
        row.ref_vx,
        row.ref_vy,
        row.ref_vz,
        row.x,
        row.y,
        row.z,
        row.qw,
        row.qx,
        row.qy,
        row.qz,
        row.vx,
        row.vy,
        row.vz,
        row.thrust1,
        row.thrust2,
        row.tilt1,
        row.tilt2,
        row.solve_time_us as f64,
        code(&statuses, &row.qp_status),
        row.cost,
        row.slack_max,
        row.kkt_residual,
        row.power,
        row.slipping as u8 as f64,
        row.violation as u8 as f64,
        code(&EVENTS, &row.event),
    ]
}

/// Tidy long format: one record per series and tick, series-major.
pub fn to_long(rows: &[LogRow]) -> Vec<LongRecord> {
    let per_row: Vec<_> = rows.iter().map(numeric).collect();
    let mut out = Vec::with_capacity(SERIES.len() * rows.len());
    for (s, name) in SERIES.iter().enumerate() {
        for (row, values) in rows.iter().zip(&per_row) {
            out.push(LongRecord {
                series: name.to_string(),
                t: row.t,
                value: values[s],
            });
        }
    }
    out
}

/// Inverse of [`to_long`].
pub fn from_long(records: &[LongRecord]) -> Result<Vec<LogRow>, CliError> {
    let names = SERIES;
    let n = records.iter().filter(|r| r.series == names[0]).count();
    let mut columns: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(n); names.len()];
    for r in records {
        let idx = names
            .iter()
            .position(|s| *s == r.series)
            .ok_or_else(|| CliError::Other(format!("unknown series `{}`", r.series)))?;
        columns[idx].push((r.t, r.value));
    }
    for (name, col) in names.iter().zip(&columns) {
        if col.len() != n {
            return Err(CliError::Other(format!("series `{name}` has {} samples, expected {n}", col.len())));
        }
    }
    let statuses: Vec<&str> = STATUSES.iter().map(|s| s.label()).collect();
    (0..n)
        .map(|i| {
            let v = |s: usize| columns[s][i].1;
            Ok(LogRow {
                t: columns[0][i].0,
                mode: decode(&MODES, v(0), "mode_code")?,
                ref_x: v(1),
                ref_y: v(2),
                ref_z: v(3),
                ref_qw: v(4),
                ref_qx: v(5),
                ref_qy: v(6),
                ref_qz: v(7),
                ref_vx: v(8),
                ref_vy: v(9),
                ref_vz: v(10),
                x: v(11),
                y: v(12),
                z: v(13),
                qw: v(14),
                qx: v(15),
                qy: v(16),
                qz: v(17),
                vx: v(18),
                vy: v(19),
                vz: v(20),
                thrust1: v(21),
                thrust2: v(22),
                tilt1: v(23),
                tilt2: v(24),
                solve_time_us: v(25) as u64,
                qp_status: decode(&statuses, v(26), "qp_status_code")?,
                cost: v(27),
                slack_max: v(28),
                kkt_residual: v(29),
                power: v(30),
                slipping: v(31) != 0.0,
                violation: v(32) != 0.0,
                event: decode(&EVENTS, v(33), "event_code")?,
            })
        })
        .collect()
}

pub fn write_long<W: Write>(w: W, records: &[LongRecord]) -> Result<(), CliError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["series", "t", "value"])?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_long<R: Read>(r: R) -> Result<Vec<LongRecord>, CliError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(CliError::from)).collect()
}
