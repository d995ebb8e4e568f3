use super::*;
use crate::dynamics::{ContactModel, Simulator};
use crate::rotation::euler_to_orientation;
use crate::state::Direction;
use crate::trajectory::{sample_references, GroundThrust, HybridTrajectory, ModeAnnotation, TrajectoryBuilder, TrajectorySegment};
use crate::Vec3;
use proptest::prelude::*;

const G: ModeAnnotation = ModeAnnotation::Ground(Direction::Forward);

fn params() -> VehicleParams {
    VehicleParams::default()
}

fn hover_traj(p: &VehicleParams, at: Vec3) -> HybridTrajectory {
    HybridTrajectory::from_segments(
        vec![TrajectorySegment::rest(5.0, at, ModeAnnotation::Aerial)],
        GroundThrust::default(),
        p,
        0.0,
    )
    .unwrap()
}

fn refs_of(traj: &HybridTrajectory, t0: f64, cfg: &NmpcConfig, p: &VehicleParams) -> Vec<ReferencePoint> {
    sample_references(traj, t0, cfg.horizon, cfg.dt, p, true).unwrap()
}

fn ground_eight(p: &VehicleParams, v: f64, a: f64) -> HybridTrajectory {
    let seg = TrajectorySegment::lemniscate_for_limits(0.5, v, a, Vec3::new(0.0, 0.0, p.contact_height()), G);
    HybridTrajectory::from_segments(vec![seg], GroundThrust::default(), p, 0.0).unwrap()
}

fn generic_state(seed: [f64; 6]) -> RobotState {
    RobotState {
        position: Vec3::new(seed[0], seed[1], 1.0 + seed[2]),
        velocity: Vec3::new(seed[3], -seed[4], 0.3 * seed[5]),
        orientation: euler_to_orientation(0.2 * seed[0], -0.3 * seed[1], 2.0 * seed[2]),
        omega: Vec3::new(0.5 * seed[3], 0.4 * seed[4], -0.6 * seed[5]),
    }
}

fn central_jacobians(x: &RobotState, u: &ControlInput, mode: Mode, dt: f64, p: &VehicleParams) -> (StateMatrix, InputMatrix) {
    let f = |x: &StateVector, u: &InputVector| step_vector(x, u, mode, dt, 1, p);
    let x0 = x.to_vector();
    let u0 = u.to_vector();
    let h = 1e-5;
    let mut a = StateMatrix::zeros();
    for i in 0..STATE_DIM {
        let (mut xp, mut xm) = (x0, x0);
        xp[i] += h;
        xm[i] -= h;
        a.set_column(i, &((f(&xp, &u0) - f(&xm, &u0)) / (2.0 * h)));
    }
    let mut b = InputMatrix::zeros();
    for i in 0..INPUT_DIM {
        let (mut up, mut um) = (u0, u0);
        up[i] += h;
        um[i] -= h;
        b.set_column(i, &((f(&x0, &up) - f(&x0, &um)) / (2.0 * h)));
    }
    (a, b)
}

fn relative_gap<const C: usize>(a: &SMatrix<f64, STATE_DIM, C>, b: &SMatrix<f64, STATE_DIM, C>) -> f64 {
    (a - b).norm() / b.norm().max(1e-3)
}

#[test]
fn hover_is_a_fixed_point_of_the_discretization() {
    let p = params();
    let x = RobotState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.3);
    let d = discretize(&x, &ControlInput::hover(&p), Mode::Aerial, 0.05, &p).unwrap();
    assert!((d.next.to_vector() - x.to_vector()).amax() < 1e-12);
}

#[test]
fn jacobians_match_central_differences() {
    let p = params();
    let u = ControlInput::new(4.3, 3.9, 0.1, -0.05);
    for (i, mode) in [Mode::Aerial, Mode::Ground(Direction::Forward)].into_iter().enumerate() {
        let mut x = generic_state([0.1, 0.2, 0.3, 1.2, 0.4, 0.2]);
        if i == 1 {
            x = crate::dynamics::project_to_ground(&x, &p, true);
        }
        let d = discretize(&x, &u, mode, 0.05, &p).unwrap();
        let (a, b) = central_jacobians(&x, &u, mode, 0.05, &p);
        assert!(relative_gap(&d.a, &a) < 1e-4, "{mode:?} A gap {}", relative_gap(&d.a, &a));
        assert!(relative_gap(&d.b, &b) < 1e-4, "{mode:?} B gap {}", relative_gap(&d.b, &b));
    }
}

#[test]
fn halved_steps_converge_at_fifth_order() {
    // Local error of RK4 against two half steps shrinks ~32x per halving.
    let p = params();
    let x = generic_state([0.3, -0.2, 0.1, 1.0, 0.5, -0.4]);
    let u = ControlInput::new(4.5, 3.7, 0.2, -0.1);
    let gap = |dt: f64| {
        let full = discretize(&x, &u, Mode::Aerial, dt, &p).unwrap().next;
        let half = discretize(&x, &u, Mode::Aerial, dt / 2.0, &p).unwrap().next;
        let twice = discretize(&half, &u, Mode::Aerial, dt / 2.0, &p).unwrap().next;
        (full.to_vector() - twice.to_vector()).norm()
    };
    let ratio = gap(0.04) / gap(0.02);
    assert!((20.0..48.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn exact_hover_reference_returns_reference_input() {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
    let refs = refs_of(&traj, 0.0, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.first_input().to_vector() - refs[0].input.to_vector()).amax() < 1e-6);
    assert!(sol.kkt_residual < cfg.kkt_tol);
}

#[test]
fn exact_straight_rolling_reference_returns_reference_input() {
    let p = params();
    let cfg = NmpcConfig::default();
    let r = p.contact_height();
    let seg = TrajectorySegment::line(Vec3::new(1.0, 0.5, 0.0), 10.0, Vec3::new(0.0, 0.0, r), G);
    let traj = HybridTrajectory::from_segments(vec![seg], GroundThrust { ramp_time: 0.0, ..GroundThrust::default() }, &p, 0.0).unwrap();
    let refs = refs_of(&traj, 2.0, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.first_input().to_vector() - refs[0].input.to_vector()).amax() < 1e-6);
}

fn offset_solution(offset: Vec3) -> (OcpSolution, Vec<f64>, f64, f64) {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
    let refs = refs_of(&traj, 0.0, &cfg, &p);
    let mut x = refs[0].state;
    x.position += offset;
    let sol = solve(&x, &refs, &cfg, &p, None).unwrap();
    let errors: Vec<f64> = sol
        .states
        .iter()
        .zip(&refs)
        .map(|(s, r)| (s.position - r.state.position).norm())
        .collect();

    // Baseline: keep applying the reference inputs.
    let modes: Vec<Mode> = refs[..cfg.horizon].iter().map(|r| r.mode).collect();
    let idle: Vec<ControlInput> = refs[..cfg.horizon].iter().map(|r| r.input).collect();
    let idle_states = rollout(&x, &idle, &modes, &cfg, &p).unwrap();
    let idle_cost = tracking_cost(&idle_states, &idle, &refs, &cfg);
    let actual = rollout(&x, &sol.inputs, &modes, &cfg, &p).unwrap();
    let actual_cost = tracking_cost(&actual, &sol.inputs, &refs, &cfg);
    (sol, errors, idle_cost, actual_cost)
}

#[test]
fn offset_along_arm_is_reduced_monotonically() {
    let (sol, errors, idle_cost, actual_cost) = offset_solution(Vec3::new(0.2, 0.0, 0.0));
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{errors:?}");
    }
    assert!(errors.last().unwrap() < &errors[0]);
    assert!(sol.cost < idle_cost);
    assert!(actual_cost < idle_cost);
}

#[test]
fn sideways_offset_has_a_wrong_way_transient() {
    // Rolling the body needs the tilt torque F_y·h, which pushes sideways
    // against the eventual correction, so the error first grows a little.
    let (sol, errors, idle_cost, actual_cost) = offset_solution(Vec3::new(0.0, 0.2, 0.0));
    assert!(errors[1] > errors[0]);
    let peak = errors.iter().cloned().fold(0.0, f64::max);
    assert!(peak < 0.22, "{errors:?}");
    let k_peak = errors.iter().position(|&e| e == peak).unwrap();
    for w in errors[k_peak..].windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{errors:?}");
    }
    assert!(*errors.last().unwrap() < 0.5 * errors[0]);
    assert!(sol.cost < idle_cost);
    assert!(actual_cost < idle_cost);
}

#[test]
fn ground_eight_respects_bounds_and_normals() {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = ground_eight(&p, 2.8, 3.0);
    let (lo, hi) = cfg.bounds(&p);
    let mut ctl = Nmpc::new(cfg.clone(), p).unwrap();
    let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, traj.reference(0.0, &p, true).unwrap().state);
    for tick in 0..300 {
        let t = tick as f64 * 0.005;
        let refs = refs_of(&traj, t, &cfg, &p);
        let sol = ctl.solve(sim.state(), &refs, 0.005).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "tick {tick}");
        assert!(sol.kkt_residual < cfg.kkt_tol, "kkt {}", sol.kkt_residual);
        for u in &sol.inputs {
            let v = u.to_vector();
            for c in 0..INPUT_DIM {
                assert!(v[c] >= lo[c] && v[c] <= hi[c]);
            }
        }
        for (k, n) in sol.normals.iter().enumerate() {
            let (l, r) = n.expect("ground step");
            assert!(l >= -1e-8 && r >= -1e-8, "tick {tick} step {k}: {l} {r}");
        }
        for _ in 0..5 {
            sim.step(&sol.first_input()).unwrap();
        }
    }
}

#[test]
fn prediction_modes_follow_reference_annotations() {
    let p = params();
    let cfg = NmpcConfig::default();
    let r = p.contact_height();
    let traj = TrajectoryBuilder::new(Vec3::new(0.0, 0.0, r), &p)
        .segment(TrajectorySegment::rest(1.0, Vec3::zeros(), G))
        .blend(2.0, 2.0)
        .segment(TrajectorySegment::rest(2.0, Vec3::new(0.0, 0.0, 1.0), ModeAnnotation::Aerial))
        .build()
        .unwrap();
    // Horizon straddles the take-off.
    let t0 = traj.segments[1].t_start - 0.3;
    let refs = refs_of(&traj, t0, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    assert!(refs[..cfg.horizon].iter().any(|r| r.mode.is_ground()));
    assert!(refs[..cfg.horizon].iter().any(|r| !r.mode.is_ground()));
    for k in 0..cfg.horizon {
        assert_eq!(sol.modes[k], refs[k].mode);
        assert_eq!(sol.normals[k].is_some(), refs[k].mode.is_ground());
    }
}

#[test]
fn solve_is_deterministic() {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = ground_eight(&p, 2.0, 1.8);
    let refs = refs_of(&traj, 1.3, &cfg, &p);
    let mut x = refs[0].state;
    x.position.x += 0.05;
    let a = solve(&x, &refs, &cfg, &p, None).unwrap();
    let b = solve(&x, &refs, &cfg, &p, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unattainable_normal_margin_is_relaxed_with_slack() {
    let p = params();
    let cfg = NmpcConfig {
        normal_margin: 50.0,
        ..NmpcConfig::default()
    };
    let traj = ground_eight(&p, 1.0, 0.7);
    let refs = refs_of(&traj, 0.5, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    assert_eq!(sol.status, QpStatus::Relaxed);
    assert!(sol.max_slack() > 0.0);
    let (lo, hi) = cfg.bounds(&p);
    for u in &sol.inputs {
        let v = u.to_vector();
        assert!((0..INPUT_DIM).all(|c| v[c] >= lo[c] && v[c] <= hi[c]));
    }
}

#[test]
fn failed_qp_returns_the_warm_start_as_degraded() {
    let p = params();
    let cfg = NmpcConfig {
        max_qp_iterations: 1,
        ..NmpcConfig::default()
    };
    let traj = ground_eight(&p, 2.8, 3.0);
    let refs = refs_of(&traj, 0.5, &cfg, &p);
    let mut x = refs[0].state;
    x.position.y += 0.5;
    let warm = WarmStart::from_references(&refs).advance(0.5);
    let sol = solve(&x, &refs, &cfg, &p, Some(&warm)).unwrap();
    assert_eq!(sol.status, QpStatus::Degraded);
    assert_eq!(sol.inputs, warm.inputs);
}

#[test]
fn zero_net_tilt_ablation_holds_on_every_step() {
    let p = params();
    let cfg = NmpcConfig {
        zero_net_tilt: true,
        ..NmpcConfig::default()
    };
    let traj = ground_eight(&p, 2.0, 1.8);
    let refs = refs_of(&traj, 2.0, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    assert_ne!(sol.status, QpStatus::Degraded);
    for u in &sol.inputs {
        assert!((u.tilt1 + u.tilt2).abs() < 1e-9);
    }
}

#[test]
fn rejects_wrong_reference_count() {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
    let refs = sample_references(&traj, 0.0, 5, 0.05, &p, true).unwrap();
    assert!(matches!(
        solve(&refs[0].state, &refs, &cfg, &p, None),
        Err(NmpcError::Horizon { .. })
    ));
}

#[test]
fn config_validation() {
    assert!(NmpcConfig::default().validate().is_ok());
    for bad in [
        NmpcConfig { horizon: 0, ..NmpcConfig::default() },
        NmpcConfig { dt: 0.0, ..NmpcConfig::default() },
        NmpcConfig { q_velocity: [1.0, -1.0, 1.0], ..NmpcConfig::default() },
        NmpcConfig {
            u_min: Some([0.0, 0.0, 0.5, 0.0]),
            u_max: Some([8.0, 8.0, 0.5, 1.0]),
            ..NmpcConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn constant_solution_shifts_to_itself() {
    let p = params();
    let cfg = NmpcConfig::default();
    let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
    let refs = refs_of(&traj, 0.0, &cfg, &p);
    let sol = solve(&refs[0].state, &refs, &cfg, &p, None).unwrap();
    let constant = OcpSolution {
        inputs: vec![sol.inputs[0]; cfg.horizon],
        states: vec![sol.states[0]; cfg.horizon + 1],
        ..sol
    };
    let shifted = shift_warm_start(&constant);
    assert_eq!(shifted.inputs, constant.inputs);
    assert_eq!(shifted.states, constant.states);
}

#[test]
fn shifting_twice_equals_shifting_by_two() {
    let inputs: Vec<ControlInput> = (0..6).map(|i| ControlInput::new(i as f64, 1.0, 0.0, 0.0)).collect();
    let twice = shift_inputs(&shift_inputs(&inputs));
    let thrusts: Vec<f64> = twice.iter().map(|u| u.thrust1).collect();
    assert_eq!(thrusts, vec![2.0, 3.0, 4.0, 5.0, 5.0, 5.0]);
    let ws = WarmStart {
        inputs: inputs.clone(),
        states: (0..7).map(|i| RobotState::at_rest(Vec3::new(i as f64, 0.0, 1.0), 0.0)).collect(),
    };
    let a = ws.advance(1.0).advance(1.0);
    let b = ws.advance(2.0);
    assert_eq!(a, b);
    assert_eq!(a.inputs, twice);
}

#[test]
fn hover_tracking_error_settles_below_tenth_of_a_millimetre() {
    let p = params();
    let cfg = NmpcConfig::default();
    let target = Vec3::new(0.0, 0.0, 1.0);
    let traj = hover_traj(&p, target);
    let mut start = RobotState::at_rest(target, 0.0);
    start.position += Vec3::new(0.03, -0.02, 0.01);
    let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, start);
    let log = control_loop(&mut sim, &traj, &cfg, &LoopConfig { t_end: Some(4.0), ..LoopConfig::default() }).unwrap();
    assert!(log.outcome.is_completed());
    let last = log.ticks.last().unwrap();
    assert!((last.state.position - target).norm() < 1e-4);
}

#[test]
fn warm_start_is_no_worse_than_cold_start_over_a_lap() {
    let p = params();
    let cfg = NmpcConfig::default();
    let seg = TrajectorySegment::lemniscate_for_limits(0.5, 1.5, 1.2, Vec3::new(0.0, 0.0, 1.2), ModeAnnotation::Aerial);
    let traj = HybridTrajectory::from_segments(vec![seg], GroundThrust::default(), &p, 0.0).unwrap();
    let mean_cost = |warm: bool| {
        let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, traj.reference(0.0, &p, true).unwrap().state);
        let log = control_loop(&mut sim, &traj, &cfg, &LoopConfig { warm_start: warm, ..LoopConfig::default() }).unwrap();
        assert!(log.outcome.is_completed());
        log.ticks.iter().map(|t| t.cost).sum::<f64>() / log.ticks.len() as f64
    };
    let warm = mean_cost(true);
    let cold = mean_cost(false);
    assert!(warm <= cold, "warm {warm} cold {cold}");
}

#[test]
fn inconsistent_rates_are_rejected() {
    let p = params();
    let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
    let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, RobotState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0));
    let lc = LoopConfig {
        sim_rate: 1100.0,
        ..LoopConfig::default()
    };
    assert!(matches!(
        control_loop(&mut sim, &traj, &NmpcConfig::default(), &lc),
        Err(ControlError::Rates { .. })
    ));
}

#[test]
fn persistent_degradation_aborts_the_run() {
    let p = params();
    let cfg = NmpcConfig {
        max_qp_iterations: 1,
        max_degraded_ticks: 3,
        ..NmpcConfig::default()
    };
    let traj = ground_eight(&p, 2.8, 3.0);
    let mut start = traj.reference(0.0, &p, true).unwrap().state;
    start.position.y += 0.3;
    let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, start);
    let log = control_loop(&mut sim, &traj, &cfg, &LoopConfig::default()).unwrap();
    assert!(matches!(log.outcome, RunOutcome::SolverFailure { ticks: 4, .. }));
    assert_eq!(log.ticks.len(), 4);
}

#[test]
fn seeded_noise_is_reproducible() {
    let p = params();
    let cfg = NmpcConfig::default();
    let target = Vec3::new(0.0, 0.0, 1.0);
    let traj = hover_traj(&p, target);
    let run = |seed: u64| {
        let mut sim = Simulator::new(p, ContactModel::default(), 1e-3, RobotState::at_rest(target, 0.0));
        let lc = LoopConfig {
            t_end: Some(0.5),
            noise: Some(NoiseConfig {
                position_std: 0.01,
                attitude_std: 0.01,
                seed,
            }),
            ..LoopConfig::default()
        };
        control_loop(&mut sim, &traj, &cfg, &lc).unwrap()
    };
    let a = run(7);
    assert_eq!(a, run(7));
    assert_ne!(a.ticks.last().unwrap().state, run(8).ticks.last().unwrap().state);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_satisfy_bounds_and_kkt(
        dx in -0.3f64..0.3,
        dy in -0.3f64..0.3,
        dz in -0.2f64..0.2,
        yaw in -0.5f64..0.5,
    ) {
        let p = params();
        let cfg = NmpcConfig::default();
        let traj = hover_traj(&p, Vec3::new(0.0, 0.0, 1.0));
        let refs = refs_of(&traj, 0.0, &cfg, &p);
        let mut x = refs[0].state;
        x.position += Vec3::new(dx, dy, dz);
        x.orientation = euler_to_orientation(0.0, 0.0, yaw);
        let sol = solve(&x, &refs, &cfg, &p, None).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.kkt_residual < cfg.kkt_tol);
        let (lo, hi) = cfg.bounds(&p);
        for u in &sol.inputs {
            let v = u.to_vector();
            for c in 0..INPUT_DIM {
                prop_assert!(v[c] >= lo[c] && v[c] <= hi[c]);
            }
        }
        prop_assert!(sol.cost.is_finite());
    }
}
