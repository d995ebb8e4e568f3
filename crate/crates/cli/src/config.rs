//! Scenario files: a versioned TOML schema with unknown keys rejected.

use std::path::Path;

use bicopter_core::dynamics::ContactModel;
use bicopter_core::nmpc::{LoopConfig, NmpcConfig, NoiseConfig};
use bicopter_core::trajectory::{
    GroundThrust, HybridTrajectory, ModeAnnotation, TrajectoryBuilder, TrajectoryError, TrajectorySegment,
};
use bicopter_core::{Direction, Vec3, VehicleParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Scenario files shipped with the binary, by name.
pub const BUNDLED: [(&str, &str); 7] = [
    ("aerial_8shape", include_str!("../scenarios/aerial_8shape.toml")),
    ("ground_8shape_rough", include_str!("../scenarios/ground_8shape_rough.toml")),
    ("ground_8shape_slippery", include_str!("../scenarios/ground_8shape_slippery.toml")),
    ("hybrid_3d", include_str!("../scenarios/hybrid_3d.toml")),
    ("energy_compare", include_str!("../scenarios/energy_compare.toml")),
    ("benchmark_slippery", include_str!("../scenarios/benchmark_slippery.toml")),
    ("narrow_gap_width_report", include_str!("../scenarios/narrow_gap_width_report.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One closed-loop tracking run.
    Track,
    /// Matched aerial and ground figure-eights with power logging.
    EnergyCompare,
    /// Full vehicle against the zero-net-tilt ablation at increasing speed.
    Benchmark,
    /// Layout width and steering tables only.
    WidthReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub kind: ScenarioKind,
    /// Seeds the optional state noise.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub controller: NmpcConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub energy: Option<EnergyConfig>,
    pub benchmark: Option<BenchmarkConfig>,
    pub width: Option<WidthConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Aerial,
    Ground,
    GroundReverse,
    /// Ground at contact height, aerial above.
    ByAltitude,
}

impl ModeName {
    pub fn annotation(self) -> ModeAnnotation {
        match self {
            ModeName::Aerial => ModeAnnotation::Aerial,
            ModeName::Ground => ModeAnnotation::Ground(Direction::Forward),
            ModeName::GroundReverse => ModeAnnotation::Ground(Direction::Reverse),
            ModeName::ByAltitude => ModeAnnotation::ByAltitude(Direction::Forward),
        }
    }
}

fn default_aspect() -> f64 {
    0.5
}

fn default_laps() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentConfig {
    /// Figure-eight sized so its peak speed and acceleration equal the limits.
    Lemniscate {
        v_max: f64,
        a_max: f64,
        #[serde(default = "default_aspect")]
        aspect: f64,
        /// Height of the segment; the contact height when absent.
        altitude: Option<f64>,
        mode: ModeName,
        #[serde(default = "default_laps")]
        laps: f64,
    },
    Circle {
        radius: f64,
        speed: f64,
        altitude: Option<f64>,
        mode: ModeName,
        #[serde(default = "default_laps")]
        laps: f64,
    },
    Line {
        velocity: [f64; 3],
        duration: f64,
        altitude: Option<f64>,
        mode: ModeName,
    },
    Rest {
        duration: f64,
        altitude: Option<f64>,
        mode: ModeName,
    },
    /// Quintic transition into the next segment, at that segment's altitude.
    Blend { duration: f64, a_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Start point; `(0, 0, z of the first segment)` when absent.
    pub start: Option<[f64; 3]>,
    pub initial_yaw: f64,
    /// Vertical body thrust schedule on the ground.
    pub ground_thrust: GroundThrust,
    pub segments: Vec<SegmentConfig>,
    /// Run length; the trajectory duration when absent.
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// Overrides the vehicle rolling friction.
    pub rolling_friction: Option<f64>,
    /// Overrides the vehicle lateral friction.
    pub lateral_friction: Option<f64>,
    /// Allow lateral sliding when friction saturates.
    pub slip: bool,
    pub relaxation_time: f64,
    pub position_noise_std: f64,
    pub attitude_noise_std: f64,
    pub control_rate: f64,
    pub sim_rate: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            rolling_friction: None,
            lateral_friction: None,
            slip: false,
            relaxation_time: ContactModel::default().relaxation_time,
            position_noise_std: 0.0,
            attitude_noise_std: 0.0,
            control_rate: 200.0,
            sim_rate: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write every n-th tick to the run CSV.
    pub decimation: usize,
    /// Record wall-clock solve times (makes logs non-reproducible).
    pub solve_timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            decimation: 1,
            solve_timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub v_max: f64,
    pub a_max: f64,
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    pub aerial_altitude: f64,
    /// Subtracted from both average powers before the ratio [W].
    #[serde(default)]
    pub standby_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// `(v_max, a_max)` pairs in increasing order.
    pub speeds: Vec<[f64; 2]>,
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    /// Lateral tracking error that counts as a slip failure [m].
    pub lateral_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthConfig {
    /// Sized mass [kg]; the vehicle mass when absent.
    pub mass: Option<f64>,
    /// Reference rotor radius fixing the hover efficiency of the bicopter [m].
    pub rotor_radius: f64,
    #[serde(default)]
    pub clearance: f64,
    /// Drag-to-thrust coefficient ratios for the steering sweep.
    #[serde(default)]
    pub torque_ratios: Vec<f64>,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn finite_positive(name: &str, v: f64) -> Result<(), CliError> {
    check(v.is_finite() && v > 0.0, || format!("{name} must be finite and > 0, got {v}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn bundled(name: &str) -> Result<Self, CliError> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!("unknown scenario `{name}`; bundled: {}", names.join(", ")))
            })?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check(self.schema_version == SCHEMA_VERSION, || {
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        check(!self.name.is_empty(), || "name must not be empty".into())?;
        self.params()?;
        self.controller
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let env = &self.environment;
        finite_positive("environment.control_rate", env.control_rate)?;
        finite_positive("environment.sim_rate", env.sim_rate)?;
        finite_positive("environment.relaxation_time", env.relaxation_time)?;
        for (name, v) in [
            ("environment.position_noise_std", env.position_noise_std),
            ("environment.attitude_noise_std", env.attitude_noise_std),
        ] {
            check(v.is_finite() && v >= 0.0, || format!("{name} must be finite and >= 0, got {v}"))?;
        }
        check(self.output.decimation >= 1, || "output.decimation must be >= 1".into())?;
        if let Some(t) = self.trajectory.t_end {
            finite_positive("trajectory.t_end", t)?;
        }
        match self.kind {
            ScenarioKind::Track => {
                check(!self.trajectory.segments.is_empty(), || {
                    "a track scenario needs trajectory.segments".into()
                })?;
                self.build_trajectory()?;
            }
            ScenarioKind::EnergyCompare => {
                let e = self
                    .energy
                    .ok_or_else(|| CliError::Config("an energy_compare scenario needs an [energy] block".into()))?;
                finite_positive("energy.v_max", e.v_max)?;
                finite_positive("energy.a_max", e.a_max)?;
                finite_positive("energy.aspect", e.aspect)?;
                check(e.aerial_altitude > self.params()?.contact_height(), || {
                    "energy.aerial_altitude must be above the contact height".into()
                })?;
                check(e.standby_power.is_finite() && e.standby_power >= 0.0, || {
                    "energy.standby_power must be >= 0".into()
                })?;
            }
            ScenarioKind::Benchmark => {
                let b = self
                    .benchmark
                    .as_ref()
                    .ok_or_else(|| CliError::Config("a benchmark scenario needs a [benchmark] block".into()))?;
                check(!b.speeds.is_empty(), || "benchmark.speeds must not be empty".into())?;
                for s in &b.speeds {
                    finite_positive("benchmark speed", s[0])?;
                    finite_positive("benchmark acceleration", s[1])?;
                }
                finite_positive("benchmark.aspect", b.aspect)?;
                finite_positive("benchmark.lateral_threshold", b.lateral_threshold)?;
            }
            ScenarioKind::WidthReport => {
                let w = self
                    .width
                    .as_ref()
                    .ok_or_else(|| CliError::Config("a width_report scenario needs a [width] block".into()))?;
                finite_positive("width.rotor_radius", w.rotor_radius)?;
                if let Some(m) = w.mass {
                    finite_positive("width.mass", m)?;
                }
                check(w.clearance.is_finite() && w.clearance >= 0.0, || "width.clearance must be >= 0".into())?;
                for &r in &w.torque_ratios {
                    finite_positive("width.torque_ratios entry", r)?;
                }
            }
        }
        Ok(())
    }

    /// Vehicle parameters with the environment friction overrides applied.
    pub fn params(&self) -> Result<VehicleParams, CliError> {
        let mut p = self.vehicle;
        if let Some(mu) = self.environment.rolling_friction {
            p.rolling_friction = mu;
        }
        if let Some(mu) = self.environment.lateral_friction {
            p.lateral_friction = mu;
        }
        p.validate().map_err(|e| CliError::Config(format!("vehicle: {e}")))?;
        Ok(p)
    }

    pub fn contact(&self) -> ContactModel {
        ContactModel {
            slip: self.environment.slip,
            relaxation_time: self.environment.relaxation_time,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        let env = &self.environment;
        let noise = (env.position_noise_std > 0.0 || env.attitude_noise_std > 0.0).then_some(NoiseConfig {
            position_std: env.position_noise_std,
            attitude_std: env.attitude_noise_std,
            seed: self.seed,
        });
        LoopConfig {
            control_rate: env.control_rate,
            sim_rate: env.sim_rate,
            noise,
            measure_time: self.output.solve_timing,
            t_end: self.trajectory.t_end,
            ..LoopConfig::default()
        }
    }

    pub fn build_trajectory(&self) -> Result<HybridTrajectory, CliError> {
        let p = self.params()?;
        build_trajectory(&self.trajectory, &p).map_err(|e| CliError::Config(format!("trajectory: {e}")))
    }
}

fn segment(cfg: &SegmentConfig, contact: f64) -> Option<TrajectorySegment> {
    let origin = |alt: Option<f64>| Vec3::new(0.0, 0.0, alt.unwrap_or(contact));
    Some(match *cfg {
        SegmentConfig::Lemniscate {
            v_max,
            a_max,
            aspect,
            altitude,
            mode,
            laps,
        } => TrajectorySegment::lemniscate_for_limits(aspect, v_max, a_max, origin(altitude), mode.annotation())
            .with_laps(laps),
        SegmentConfig::Circle {
            radius,
            speed,
            altitude,
            mode,
            laps,
        } => TrajectorySegment::circle(radius, speed / radius, origin(altitude), mode.annotation()).with_laps(laps),
        SegmentConfig::Line {
            velocity,
            duration,
            altitude,
            mode,
        } => TrajectorySegment::line(Vec3::from(velocity), duration, origin(altitude), mode.annotation()),
        SegmentConfig::Rest {
            duration,
            altitude,
            mode,
        } => TrajectorySegment::rest(duration, origin(altitude), mode.annotation()),
        SegmentConfig::Blend { .. } => return None,
    })
}

/// Chains the configured segments; each starts where the previous ends.
pub fn build_trajectory(cfg: &TrajectoryConfig, params: &VehicleParams) -> Result<HybridTrajectory, TrajectoryError> {
    let contact = params.contact_height();
    let first = cfg
        .segments
        .iter()
        .find_map(|s| segment(s, contact))
        .ok_or_else(|| TrajectoryError::InvalidSegment {
            index: 0,
            reason: "no segments".into(),
        })?;
    let start = cfg
        .start
        .map(Vec3::from)
        .unwrap_or_else(|| Vec3::new(0.0, 0.0, first.start().p.z));
    let mut b = TrajectoryBuilder::new(start, params)
        .initial_yaw(cfg.initial_yaw)
        .ground_thrust(cfg.ground_thrust);
    for (index, s) in cfg.segments.iter().enumerate() {
        b = match s {
            SegmentConfig::Blend { duration, a_max } => b.blend(*duration, *a_max),
            other => {
                let seg = segment(other, contact).expect("not a blend");
                seg.validate(index)?;
                b.segment(seg)
            }
        };
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_validates() {
        for (name, _) in BUNDLED {
            let cfg = ScenarioConfig::bundled(name).unwrap();
            assert_eq!(cfg.name, name);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "schema_version = 1\nname = \"x\"\nkind = \"width_report\"\ncolour = 3\n[width]\nrotor_radius = 0.06\n";
        assert!(matches!(ScenarioConfig::from_toml(text), Err(CliError::Config(_))));
        let nested = "schema_version = 1\nname = \"x\"\nkind = \"width_report\"\n[vehicle]\nmas = 1.0\n[width]\nrotor_radius = 0.06\n";
        assert!(ScenarioConfig::from_toml(nested).is_err());
    }

    #[test]
    fn physical_invariants_are_enforced_at_load() {
        let text = "schema_version = 1\nname = \"x\"\nkind = \"width_report\"\n[vehicle]\nmass = -1.0\n[width]\nrotor_radius = 0.06\n";
        let err = ScenarioConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = "schema_version = 2\nname = \"x\"\nkind = \"width_report\"\n[width]\nrotor_radius = 0.06\n";
        assert!(ScenarioConfig::from_toml(text).is_err());
    }

    #[test]
    fn missing_kind_block_is_rejected() {
        let text = "schema_version = 1\nname = \"x\"\nkind = \"benchmark\"\n";
        assert!(ScenarioConfig::from_toml(text).is_err());
    }

    #[test]
    fn serialized_config_round_trips() {
        for (name, _) in BUNDLED {
            let cfg = ScenarioConfig::bundled(name).unwrap();
            let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn environment_overrides_friction() {
        let cfg = ScenarioConfig::bundled("ground_8shape_slippery").unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(p.lateral_friction, 0.3);
        assert!(cfg.contact().slip);
    }
}
