use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bicopter_cli::config::ScenarioConfig;
use bicopter_cli::output::{from_long, read_long, read_rows_file, summarize, RunSummary};
use bicopter_cli::runner::run_benchmark;
use bicopter_core::nmpc::RunOutcome;

fn bicopter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicopter"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(format!("{}.toml", cfg.name));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

/// Bundled scenario cut to `t_end` seconds.
fn short(name: &str, t_end: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::bundled(name).unwrap();
    cfg.name = format!("{name}_short");
    cfg.trajectory.t_end = Some(t_end);
    cfg
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn negative_mass_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short("aerial_8shape", 0.5);
    cfg.vehicle.mass = -1.0;
    let path = write_config(dir.path(), &cfg);
    let out = bicopter(&["track", "--config", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mass"));
}

#[test]
fn unknown_scenario_and_wrong_kind_are_config_errors() {
    let out = bicopter(&["track", "--scenario", "no_such_scenario"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bicopter(&["simulate", "--scenario", "narrow_gap_width_report"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bicopter(&["track"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_writes_width_and_steering_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = bicopter(&["analyze", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let widths = std::fs::read_to_string(dir.path().join("narrow_gap_width_report_widths.csv")).unwrap();
    assert_eq!(widths.lines().count(), 6);
    assert!(widths.lines().next().unwrap().starts_with("layout,rotors,clearance,rotor_radius,width,ratio"));
    let steering = std::fs::read_to_string(dir.path().join("narrow_gap_width_report_steering.csv")).unwrap();
    assert!(steering.lines().count() > 2);
}

#[test]
fn track_outputs_are_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short("ground_8shape_rough", 1.5);
    let path = write_config(dir.path(), &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = bicopter(&["track", "--config", s(&path), "--out", s(d)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = a.join("ground_8shape_rough_short.csv");
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(b.join("ground_8shape_rough_short.csv")).unwrap());

    // The summary JSON is a function of the logged rows.
    let rows = read_rows_file(&csv_a).unwrap();
    assert_eq!(rows.len(), 300);
    let json: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(a.join("ground_8shape_rough_short_summary.json")).unwrap()).unwrap();
    let again = summarize(&json.label, &RunOutcome::Completed, &rows, json.design_peak_speed.zip(json.design_peak_accel), None);
    assert_eq!(again, json);

    // Long export: equal series lengths and the same summary after the round trip.
    let out = bicopter(&["export", "--log", s(&csv_a), "--out", s(dir.path())]);
    assert!(out.status.success());
    let long = read_long(std::fs::File::open(dir.path().join("ground_8shape_rough_short_long.csv")).unwrap()).unwrap();
    let count = |name: &str| long.iter().filter(|r| r.series == name).count();
    for (actual, reference) in [("x", "ref_x"), ("y", "ref_y"), ("z", "ref_z"), ("qw", "ref_qw")] {
        assert_eq!(count(actual), rows.len());
        assert_eq!(count(actual), count(reference));
    }
    let back = from_long(&long).unwrap();
    let from_export = summarize(&json.label, &RunOutcome::Completed, &back, json.design_peak_speed.zip(json.design_peak_accel), None);
    assert!((from_export.rmse_2d - json.rmse_2d).abs() < 1e-9);
    assert!((from_export.rmse_3d - json.rmse_3d).abs() < 1e-9);
    assert!((from_export.mean_power - json.mean_power).abs() < 1e-9);
    assert_eq!(from_export.ticks, json.ticks);

    // `analyze --log` recomputes the same error metrics.
    let out = bicopter(&["analyze", "--log", s(&csv_a)]);
    assert!(out.status.success());
    let printed: RunSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed.rmse_2d, json.rmse_2d);
    assert_eq!(printed.max_lateral_error, json.max_lateral_error);
    assert_eq!(printed.design_peak_speed, None);
}

#[test]
fn simulate_plays_feed_forward_open_loop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short("aerial_8shape", 0.5);
    let path = write_config(dir.path(), &cfg);
    let out = bicopter(&["simulate", "--config", s(&path), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows_file(&dir.path().join("aerial_8shape_short.csv")).unwrap();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.cost == 0.0 && r.qp_status == "optimal"));
    // Starting on the reference, half a second of feed-forward stays close.
    let last = rows.last().unwrap();
    assert!((last.position() - last.reference_position()).norm() < 0.05);
}

#[test]
fn high_lateral_friction_lets_both_variants_finish() {
    let mut cfg = ScenarioConfig::bundled("benchmark_slippery").unwrap();
    cfg.environment.lateral_friction = Some(1e6);
    cfg.benchmark.as_mut().unwrap().speeds = vec![[1.0, 0.7]];
    cfg.validate().unwrap();
    let result = run_benchmark(&cfg).unwrap();
    assert_eq!(result.report.rows.len(), 2);
    for row in &result.report.rows {
        assert!(row.finished, "{row:?}");
        assert_eq!(row.slipping_ticks, 0);
    }
}
