//! Design-space calculators (momentum-theory power, rotor sizing, traversing
//! width, yaw authority) and experiment metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::VehicleParams;
use crate::Vec3;

/// Gravity used by the sizing calculators [m/s^2].
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("argument `{name}` must be {rule}, got {value}")]
    InvalidArgument {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("sequences differ in length: {actual} actual vs {reference} reference samples")]
    LengthMismatch { actual: usize, reference: usize },
    #[error("cannot compute RMSE of empty sequences")]
    Empty,
}

fn positive(name: &'static str, value: f64) -> Result<f64, AnalysisError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(AnalysisError::InvalidArgument {
            name,
            rule: "finite and > 0",
            value,
        })
    }
}

/// Ideal (momentum theory) power to produce thrust `thrust` with a rotor of
/// disk area `area` in air of density `rho`.
pub fn ideal_power(thrust: f64, area: f64, rho: f64) -> Result<f64, AnalysisError> {
    if !(thrust.is_finite() && thrust >= 0.0) {
        return Err(AnalysisError::InvalidArgument {
            name: "thrust",
            rule: "finite and >= 0",
            value: thrust,
        });
    }
    positive("area", area)?;
    positive("rho", rho)?;
    Ok((thrust.powi(3) / (2.0 * area * rho)).sqrt())
}

/// Hover efficiency: mass lifted per watt of ideal hover power [kg/W].
pub fn hover_efficiency(mass: f64, rotors: u32, area: f64, rho: f64) -> Result<f64, AnalysisError> {
    positive("mass", mass)?;
    positive("rotors", rotors as f64)?;
    positive("area", area)?;
    positive("rho", rho)?;
    let g = STANDARD_GRAVITY;
    Ok((2.0 * rotors as f64 * area * rho).sqrt() / (g * (mass * g).sqrt()))
}

/// Rotor radius giving hover efficiency `eta` with `rotors` rotors.
pub fn rotor_radius(eta: f64, mass: f64, rotors: u32, rho: f64) -> Result<f64, AnalysisError> {
    positive("eta", eta)?;
    positive("mass", mass)?;
    positive("rotors", rotors as f64)?;
    positive("rho", rho)?;
    let g = STANDARD_GRAVITY;
    Ok(eta * g * (mass * g).sqrt() / (2.0 * PI * rotors as f64 * rho).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutKind {
    SingleRotor,
    /// Two rotors one behind the other along the direction of motion.
    BicopterLongitudinal,
    /// Two rotors side by side.
    BicopterHorizontal,
    QuadrotorX,
    Hexacopter,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 5] = [
        LayoutKind::SingleRotor,
        LayoutKind::BicopterLongitudinal,
        LayoutKind::BicopterHorizontal,
        LayoutKind::QuadrotorX,
        LayoutKind::Hexacopter,
    ];

    pub fn rotors(self) -> u32 {
        match self {
            LayoutKind::SingleRotor => 1,
            LayoutKind::BicopterLongitudinal | LayoutKind::BicopterHorizontal => 2,
            LayoutKind::QuadrotorX => 4,
            LayoutKind::Hexacopter => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LayoutKind::SingleRotor => "single-rotor",
            LayoutKind::BicopterLongitudinal => "bicopter-longitudinal",
            LayoutKind::BicopterHorizontal => "bicopter-horizontal",
            LayoutKind::QuadrotorX => "quadrotor-x",
            LayoutKind::Hexacopter => "hexacopter",
        }
    }
}

/// A rotor layout with the gap between neighbouring disks expressed as a
/// fraction of the rotor diameter (zero for the theoretical minimum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub kind: LayoutKind,
    pub clearance: f64,
}

impl LayoutSpec {
    pub fn new(kind: LayoutKind) -> Self {
        Self { kind, clearance: 0.0 }
    }

    pub fn with_clearance(kind: LayoutKind, clearance: f64) -> Result<Self, AnalysisError> {
        if !(clearance.is_finite() && clearance >= 0.0) {
            return Err(AnalysisError::InvalidArgument {
                name: "clearance",
                rule: "finite and >= 0",
                value: clearance,
            });
        }
        Ok(Self { kind, clearance })
    }

    pub fn rotors(&self) -> u32 {
        self.kind.rotors()
    }

    /// Width across the direction of motion for rotor radius `r`.
    pub fn min_width(&self, r: f64) -> f64 {
        let pitch = 2.0 * r * (1.0 + self.clearance);
        match self.kind {
            LayoutKind::SingleRotor | LayoutKind::BicopterLongitudinal => 2.0 * r,
            // Two disks side by side; the X quadrotor moving along a side of
            // its square shows the same two-disk width.
            LayoutKind::BicopterHorizontal | LayoutKind::QuadrotorX => pitch + 2.0 * r,
            // Six disks on a ring with neighbours `pitch` apart (ring radius
            // equals the pitch). With a vertex pointing along the motion the
            // centres span pitch*sqrt(3) across it, the narrower orientation.
            LayoutKind::Hexacopter => pitch * 3f64.sqrt() + 2.0 * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WidthReport {
    pub layout: LayoutSpec,
    pub rotor_radius: f64,
    pub width: f64,
    /// Width relative to a single rotor of equal hover efficiency.
    pub ratio: f64,
}

/// Minimum traversing width of `layout` sized for mass `mass` and hover
/// efficiency `eta`, with the single-rotor baseline `2 R_1`.
pub fn traversing_width(layout: &LayoutSpec, mass: f64, eta: f64, rho: f64) -> Result<WidthReport, AnalysisError> {
    let r = rotor_radius(eta, mass, layout.rotors(), rho)?;
    let baseline = 2.0 * rotor_radius(eta, mass, 1, rho)?;
    let width = layout.min_width(r);
    Ok(WidthReport {
        layout: *layout,
        rotor_radius: r,
        width,
        ratio: width / baseline,
    })
}

/// Width reports for every layout at a common clearance.
pub fn layout_table(mass: f64, eta: f64, rho: f64, clearance: f64) -> Result<Vec<WidthReport>, AnalysisError> {
    LayoutKind::ALL
        .iter()
        .map(|&k| traversing_width(&LayoutSpec::with_clearance(k, clearance)?, mass, eta, rho))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YawVehicle {
    /// Yaw from rotor drag torque.
    QuadrotorBased,
    /// Yaw from opposed rotor tilt.
    BicopterBased,
}

/// Largest yaw torque available from rotor thrust `thrust` [N m].
pub fn max_yaw_torque(thrust: f64, params: &VehicleParams, vehicle: YawVehicle) -> Result<f64, AnalysisError> {
    positive("thrust", thrust)?;
    let weight = params.mass * params.gravity;
    if thrust >= weight {
        return Err(AnalysisError::InvalidArgument {
            name: "thrust",
            rule: "below the vehicle weight",
            value: thrust,
        });
    }
    Ok(match vehicle {
        YawVehicle::QuadrotorBased => params.torque_coeff / params.thrust_coeff * thrust,
        YawVehicle::BicopterBased => params.arm_length * thrust,
    })
}

/// Bicopter over quadrotor yaw authority, `l c_t / c_q`.
pub fn steering_ratio(params: &VehicleParams) -> f64 {
    params.arm_length * params.thrust_coeff / params.torque_coeff
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RmseDims {
    /// Horizontal components only.
    Planar,
    Spatial,
}

/// Root-mean-square position error.
pub fn rmse(actual: &[Vec3], reference: &[Vec3], dims: RmseDims) -> Result<f64, AnalysisError> {
    if actual.len() != reference.len() {
        return Err(AnalysisError::LengthMismatch {
            actual: actual.len(),
            reference: reference.len(),
        });
    }
    if actual.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let sum: f64 = actual
        .iter()
        .zip(reference)
        .map(|(a, r)| {
            let mut d = a - r;
            if dims == RmseDims::Planar {
                d.z = 0.0;
            }
            d.norm_squared()
        })
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Energy saving of ground over aerial locomotion, `1 - P_g / P_a`.
pub fn energy_saving(aerial: f64, ground: f64) -> Result<f64, AnalysisError> {
    positive("aerial power", aerial)?;
    Ok(1.0 - ground / aerial)
}

/// As [`energy_saving`] on raw measurements, after removing the standby
/// power drawn in both modes.
pub fn energy_saving_net(aerial_raw: f64, ground_raw: f64, standby: f64) -> Result<f64, AnalysisError> {
    energy_saving(aerial_raw - standby, ground_raw - standby)
}

/// Summary numbers of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub rmse: f64,
    /// Average aerial power net of standby [W].
    pub power_aerial: Option<f64>,
    /// Average ground power net of standby [W].
    pub power_ground: Option<f64>,
    pub power_standby: f64,
    pub energy_saving: Option<f64>,
}

impl ExperimentMetrics {
    /// Powers are raw averages; the standby power is subtracted from each.
    pub fn new(
        rmse: f64,
        aerial_raw: Option<f64>,
        ground_raw: Option<f64>,
        standby: f64,
    ) -> Result<Self, AnalysisError> {
        if !(rmse.is_finite() && rmse >= 0.0) {
            return Err(AnalysisError::InvalidArgument {
                name: "rmse",
                rule: "finite and >= 0",
                value: rmse,
            });
        }
        let power_aerial = aerial_raw.map(|p| p - standby);
        let power_ground = ground_raw.map(|p| p - standby);
        let energy_saving = match (power_aerial, power_ground) {
            (Some(a), Some(g)) => Some(energy_saving(a, g)?),
            _ => None,
        };
        Ok(Self {
            rmse,
            power_aerial,
            power_ground,
            power_standby: standby,
            energy_saving,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn ideal_power_examples() {
        assert_eq!(ideal_power(0.0, 0.01, 1.2).unwrap(), 0.0);
        let p1 = ideal_power(2.0, 0.01, 1.2).unwrap();
        let p4 = ideal_power(8.0, 0.01, 1.2).unwrap();
        assert!((p4 / p1 - 8.0).abs() < 1e-12);
        // sqrt(4.07^3 / (2 * 0.012668 * 1.225)), evaluated by hand.
        let p = ideal_power(4.07, 0.012668, 1.225).unwrap();
        assert!((p - 46.6).abs() < 0.05, "{p}");
        assert!(ideal_power(-1.0, 0.01, 1.2).is_err());
        assert!(ideal_power(1.0, 0.0, 1.2).is_err());
    }

    #[test]
    fn rotor_radius_scales_with_inverse_root_of_count() {
        let eta = 0.005;
        let r1 = rotor_radius(eta, 0.8, 1, 1.225).unwrap();
        for k in [2u32, 4, 6] {
            let rk = rotor_radius(eta, 0.8, k, 1.225).unwrap();
            assert!((rk * (k as f64).sqrt() - r1).abs() < 1e-14);
        }
    }

    #[test]
    fn prototype_numbers_round_trip() {
        let (m, r, rho) = (0.835, 0.0635, 1.225);
        let eta = hover_efficiency(m, 2, PI * r * r, rho).unwrap();
        assert!((rotor_radius(eta, m, 2, rho).unwrap() - r).abs() < 1e-12);
        // Independent route: mass over total ideal hover power.
        let thrust = m * STANDARD_GRAVITY / 2.0;
        let power = 2.0 * ideal_power(thrust, PI * r * r, rho).unwrap();
        assert!((eta - m / power).abs() < 1e-12);
    }

    #[test]
    fn width_ratios_follow_rotor_count() {
        let (m, eta, rho) = (0.835, 0.006, 1.225);
        let ratio = |k| traversing_width(&LayoutSpec::new(k), m, eta, rho).unwrap().ratio;
        assert!((ratio(LayoutKind::SingleRotor) - 1.0).abs() < 1e-12);
        assert!((ratio(LayoutKind::BicopterLongitudinal) - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((ratio(LayoutKind::BicopterHorizontal) - 2.0 * FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((ratio(LayoutKind::QuadrotorX) - 1.0).abs() < 1e-12);
        let hex = (1.0 + 3f64.sqrt()) / 6f64.sqrt();
        assert!((ratio(LayoutKind::Hexacopter) - hex).abs() < 1e-12);
    }

    #[test]
    fn hexagon_orientation_is_the_narrower_one() {
        // Brute force over ring rotations of touching disks.
        let r = 1.0;
        let ring = 2.0 * r;
        let width_at = |phi: f64| {
            let ys: Vec<f64> = (0..6).map(|i| ring * (phi + i as f64 * PI / 3.0).sin()).collect();
            ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min) + 2.0 * r
        };
        let best = (0..3600).map(|i| width_at(i as f64 * PI / 3.0 / 3600.0)).fold(f64::MAX, f64::min);
        let w = LayoutSpec::new(LayoutKind::Hexacopter).min_width(r);
        assert!((w - best).abs() < 1e-9, "{w} vs {best}");
    }

    #[test]
    fn clearance_validation() {
        assert!(LayoutSpec::with_clearance(LayoutKind::QuadrotorX, -0.1).is_err());
        let tight = LayoutSpec::new(LayoutKind::QuadrotorX).min_width(0.1);
        let loose = LayoutSpec::with_clearance(LayoutKind::QuadrotorX, 0.2).unwrap().min_width(0.1);
        assert!(loose > tight);
    }

    #[test]
    fn steering_ratio_of_default_vehicle() {
        let p = VehicleParams::default();
        assert!((steering_ratio(&p) - 7.0).abs() < 1e-9);
        let quad = max_yaw_torque(2.0, &p, YawVehicle::QuadrotorBased).unwrap();
        let bi = max_yaw_torque(2.0, &p, YawVehicle::BicopterBased).unwrap();
        assert!((bi / quad - steering_ratio(&p)).abs() < 1e-9);
        assert!(max_yaw_torque(p.mass * p.gravity, &p, YawVehicle::BicopterBased).is_err());
        assert!(max_yaw_torque(0.0, &p, YawVehicle::BicopterBased).is_err());
    }

    #[test]
    fn steering_ratio_over_coefficient_range() {
        let mut p = VehicleParams::default();
        for i in 0..=100 {
            let cq_ct = 0.01 + 0.01 * i as f64 / 100.0;
            p.torque_coeff = cq_ct * p.thrust_coeff;
            let s = steering_ratio(&p);
            assert!((3.5 - 1e-9..=7.0 + 1e-9).contains(&s));
            if cq_ct <= 0.014 {
                assert!(s >= 5.0);
            }
        }
    }

    #[test]
    fn rmse_examples() {
        let a = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        assert_eq!(rmse(&a, &a, RmseDims::Spatial).unwrap(), 0.0);
        let d = Vec3::new(0.3, -0.4, 1.2);
        let b: Vec<Vec3> = a.iter().map(|p| p + d).collect();
        assert!((rmse(&b, &a, RmseDims::Spatial).unwrap() - d.norm()).abs() < 1e-12);
        assert!((rmse(&b, &a, RmseDims::Planar).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(rmse(&a, &a[..1], RmseDims::Spatial), Err(AnalysisError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[], RmseDims::Spatial), Err(AnalysisError::Empty)));
    }

    #[test]
    fn energy_saving_examples() {
        assert_eq!(energy_saving(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(energy_saving(100.0, 0.0).unwrap(), 1.0);
        let xi = energy_saving(226.0, 32.0).unwrap();
        assert!((xi - 0.858).abs() < 5e-4, "{xi}");
        assert!((energy_saving_net(235.0, 41.0, 9.0).unwrap() - xi).abs() < 1e-12);
        assert!(energy_saving(0.0, 1.0).is_err());
    }

    #[test]
    fn metrics_subtract_standby() {
        let m = ExperimentMetrics::new(0.1, Some(235.0), Some(41.0), 9.0).unwrap();
        assert_eq!(m.power_aerial, Some(226.0));
        assert_eq!(m.power_ground, Some(32.0));
        assert!((m.energy_saving.unwrap() - (1.0 - 32.0 / 226.0)).abs() < 1e-15);
        assert_eq!(ExperimentMetrics::new(0.1, Some(10.0), None, 0.0).unwrap().energy_saving, None);
        assert!(ExperimentMetrics::new(-0.1, None, None, 0.0).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-5.0f64..5.0).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn sizing_round_trip(m in 0.05f64..20.0, k in 1u32..9, r in 0.01f64..0.5, rho in 0.5f64..1.5) {
            let eta = hover_efficiency(m, k, PI * r * r, rho).unwrap();
            prop_assert!((rotor_radius(eta, m, k, rho).unwrap() - r).abs() < 1e-12);
        }

        #[test]
        fn longitudinal_bicopter_is_narrowest(
            m in 0.05f64..20.0,
            eta in 0.001f64..0.05,
            clearance in 0.0f64..1.0,
        ) {
            let table = layout_table(m, eta, 1.225, clearance).unwrap();
            let bi = table.iter().find(|w| w.layout.kind == LayoutKind::BicopterLongitudinal).unwrap();
            prop_assert!((bi.ratio - FRAC_1_SQRT_2).abs() < 1e-12);
            for w in table.iter().filter(|w| w.layout.kind != LayoutKind::BicopterLongitudinal) {
                prop_assert!(w.width > bi.width);
            }
        }

        #[test]
        fn width_is_monotone_in_radius(r in 0.01f64..1.0, dr in 0.0001f64..0.5, clearance in 0.0f64..1.0) {
            for k in LayoutKind::ALL {
                let l = LayoutSpec::with_clearance(k, clearance).unwrap();
                prop_assert!(l.min_width(r + dr) > l.min_width(r));
            }
        }

        #[test]
        fn steering_ratio_ignores_thrust(t in 0.1f64..4.0, scale in 1.01f64..1.9) {
            let p = VehicleParams::default();
            let ratio = |t: f64| {
                max_yaw_torque(t, &p, YawVehicle::BicopterBased).unwrap()
                    / max_yaw_torque(t, &p, YawVehicle::QuadrotorBased).unwrap()
            };
            prop_assert!((ratio(t) - ratio(t * scale)).abs() < 1e-9);
        }

        #[test]
        fn rmse_matches_naive_sum(pairs in prop::collection::vec((vec3(), vec3()), 1..40)) {
            let (a, b): (Vec<Vec3>, Vec<Vec3>) = pairs.into_iter().unzip();
            let mut acc = 0.0;
            for i in 0..a.len() {
                for c in 0..3 {
                    acc += (a[i][c] - b[i][c]) * (a[i][c] - b[i][c]);
                }
            }
            let naive = (acc / a.len() as f64).sqrt();
            prop_assert!((rmse(&a, &b, RmseDims::Spatial).unwrap() - naive).abs() < 1e-12);
        }

        #[test]
        fn rmse_triangle_inequality(triples in prop::collection::vec((vec3(), vec3(), vec3()), 1..30)) {
            let a: Vec<Vec3> = triples.iter().map(|t| t.0).collect();
            let b: Vec<Vec3> = triples.iter().map(|t| t.1).collect();
            let c: Vec<Vec3> = triples.iter().map(|t| t.2).collect();
            for dims in [RmseDims::Planar, RmseDims::Spatial] {
                let lhs = rmse(&a, &c, dims).unwrap();
                let rhs = rmse(&a, &b, dims).unwrap() + rmse(&b, &c, dims).unwrap();
                prop_assert!(lhs <= rhs + 1e-12);
            }
        }

        #[test]
        fn single_rotor_power_is_superlinear(t1 in 0.0f64..10.0, t2 in 0.0f64..10.0, s in 0.001f64..0.1) {
            let joint = ideal_power(t1 + t2, s, 1.225).unwrap();
            let split = ideal_power(t1, s, 1.225).unwrap() + ideal_power(t2, s, 1.225).unwrap();
            prop_assert!(joint >= split - 1e-12);
        }
    }
}
