use voltreach::powersys::network::{BUS_HUB, BUS_LOAD, TIE_A};
use voltreach::powersys::scenario::{scenario_simulator, Termination};
use voltreach::powersys::*;
use voltreach::RandomStream;

fn reference() -> (ScenarioConfig, SystemParams) {
    (ScenarioConfig::default(), SystemParams::default())
}

fn op(p_g: f64, p_total: f64, r: f64) -> OperatingPoint {
    OperatingPoint {
        p_g_mw: p_g,
        p_total_mw: p_total,
        r_motor: r,
    }
}

/// Runs the simulator substep by substep up to `t_end`, calling `visit`
/// after every substep.
fn run_until(sim: &mut Simulator, t_end: f64, mut visit: impl FnMut(&Simulator)) {
    while sim.state.time + 1e-9 < t_end {
        sim.substep().unwrap();
        visit(sim);
    }
}

#[test]
fn flat_case_without_injections() {
    let mut p = SystemParams::default();
    p.generator.online = false;
    p.source.emf = 1.0;
    p.network.b_tie = 0.0;
    p.network.bus_shunt_b = [0.0; 4];
    let mut sim = initialize(&p, &op(0.0, 0.0, 0.0)).unwrap();
    let sol = sim.solve_network().unwrap();
    assert!(sol.residual < 1e-10);
    assert!((sim.state.network.tap() - 1.0).abs() < 1e-10);
    for v in &sol.voltages {
        assert!((v.re - 1.0).abs() < 1e-10 && v.im.abs() < 1e-10, "{v}");
    }
    let eq = solve_short_term_equilibrium(&sim, &SlowVars::from_state(&sim.state)).unwrap();
    for v in &eq.voltages {
        assert!((v.norm() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn nominal_operating_point_in_voltage_band() {
    let p = SystemParams::default();
    let mut sim = initialize(&p, &op(550.0, 1500.0, 0.0)).unwrap();
    let sol = sim.solve_network().unwrap();
    assert!(sol.residual < 1e-8);
    for v in &sol.voltages {
        assert!((0.95..=1.05).contains(&v.norm()), "{}", v.norm());
    }
}

#[test]
fn equilibrium_is_a_fixed_point_of_the_fast_step() {
    for r in [0.0, 0.4] {
        let mut sim = initialize(&SystemParams::default(), &op(550.0, 1500.0, r)).unwrap();
        let y0 = sim.fast_vars();
        for _ in 0..10 {
            sim.step_fast(0.01).unwrap();
        }
        let d = sim.fast_vars().max_abs_diff(&y0);
        assert!(d < 1e-10, "R = {r}: drift {d:e}");
    }
}

#[test]
fn short_term_equilibrium_matches_settled_simulation() {
    let mut sim = initialize(&SystemParams::default(), &op(550.0, 1500.0, 0.3)).unwrap();
    // Perturb and let the fast dynamics settle without a disturbance.
    sim.state.generator.eq_prime *= 1.01;
    sim.state.motor.slip *= 1.2;
    sim.solve_network().unwrap();
    let slow = SlowVars::from_state(&sim.state);
    for _ in 0..20_000 {
        sim.step_fast(0.01).unwrap();
    }
    let eq = solve_short_term_equilibrium(&sim, &slow).unwrap();
    let d = eq.fast.max_abs_diff(&sim.fast_vars());
    assert!(d < 1e-6, "difference {d:e}");
}

#[test]
fn every_accepted_solve_meets_tolerance() {
    let (cfg, p) = reference();
    let mut sim = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
    let mut worst: f64 = 0.0;
    while sim.state.time < cfg.horizon_s {
        if sim.step_slow(1.0).map(|e| e.is_some()).unwrap_or(true) {
            break;
        }
        worst = worst.max(sim.last_solve.as_ref().unwrap().residual);
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn step_halving_difference_small() {
    let (cfg, p) = reference();
    let run = |h: f64| {
        let mut p = p.clone();
        p.solver.h_int = h;
        let mut sim = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
        let mut samples = Vec::new();
        let every = (1.0 / h).round() as usize;
        let mut k = 0;
        run_until(&mut sim, 100.0, |s| {
            k += 1;
            if k % every == 0 {
                samples.push(s.fast_vars());
            }
        });
        samples
    };
    let coarse = run(0.01);
    let fine = run(0.005);
    let worst = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn rk4_error_ratio_shows_fourth_order() {
    // The first second after the trip, with the exciter ceiling lifted so
    // the trajectory stays smooth.
    let mut p = SystemParams::default();
    p.avr.efd_max = 100.0;
    let base = {
        let mut sim = initialize(&p, &op(550.0, 1500.0, 0.0)).unwrap();
        sim.apply_disturbance(TIE_A).unwrap();
        sim
    };
    let run = |h: f64| {
        let mut sim = base.clone();
        for _ in 0..(1.0 / h).round() as usize {
            sim.step_fast(h).unwrap();
        }
        sim.fast_vars()
    };
    let (y1, y2, y4) = (run(0.02), run(0.01), run(0.005));
    let e1 = y1.max_abs_diff(&y2);
    let e2 = y2.max_abs_diff(&y4);
    assert!(e2 > 0.0);
    // 2^4 = 16 for a fourth-order method.
    assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
}

#[test]
fn v3_and_v4_drop_after_trip() {
    let p = SystemParams::default();
    let mut sim = initialize(&p, &op(550.0, 1500.0, 0.0)).unwrap();
    let v3 = sim.bus_voltage(BUS_LOAD);
    let v4 = sim.bus_voltage(BUS_HUB);
    sim.apply_disturbance(TIE_A).unwrap();
    assert!(sim.bus_voltage(BUS_HUB) < v4);
    for _ in 0..100 {
        sim.substep().unwrap();
    }
    assert!(sim.bus_voltage(BUS_LOAD) < v3);
    assert!(sim.apply_disturbance(TIE_A).is_err());
}

#[test]
fn tap_unchanged_inside_deadband() {
    let (mut cfg, p) = reference();
    cfg.disturbance = None;
    cfg.horizon_s = 120.0;
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    assert!(traj.rows.iter().all(|r| r.tap == traj.rows[0].tap));
    assert!(traj.events.is_empty());
}

#[test]
fn tap_steps_one_increment_per_delay() {
    let (cfg, p) = reference();
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    let taps: Vec<(f64, f64, f64)> = traj
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::TapStep { from, to } => Some((e.time, from, to)),
            _ => None,
        })
        .collect();
    assert!(taps.len() >= 3);
    let trip = cfg.disturbance.as_ref().unwrap().time;
    assert!((taps[0].0 - trip - p.ltc.td0).abs() < 0.02, "first step at {}", taps[0].0);
    for w in taps.windows(2) {
        assert!((w[1].0 - w[0].0 - p.ltc.td).abs() < 0.02);
    }
    for &(_, from, to) in &taps {
        assert!(to < from, "taps only decrease while V3 is low");
        assert!((from - to - p.ltc.step).abs() < 1e-12 || (to - p.ltc.r_min).abs() < 1e-12);
    }
}

#[test]
fn reference_run_event_order_and_timing() {
    let (cfg, p) = reference();
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    let trip = traj.first_time(|k| matches!(k, EventKind::LineTrip(_))).unwrap();
    let tap = traj.first_time(|k| matches!(k, EventKind::TapStep { .. })).unwrap();
    let oxl = traj.first_time(|k| matches!(k, EventKind::OxlActivated)).unwrap();
    let ev = traj.instability().unwrap();
    assert_eq!(ev.mechanism, Mechanism::GeneratorLoss);
    assert!(trip < tap && tap < oxl && oxl < ev.time);
    assert!((60.0..=120.0).contains(&(oxl - trip)), "OXL {} s after trip", oxl - trip);
    assert!((200.0..=400.0).contains(&(ev.time - trip)), "collapse {} s after trip", ev.time - trip);
    let n_inst = traj.events.iter().filter(|e| matches!(e.kind, EventKind::Instability(_))).count();
    assert_eq!(n_inst, 1);
    assert!(matches!(traj.events.last().unwrap().kind, EventKind::Instability(_)));
}

#[test]
fn undisturbed_run_survives_with_flat_voltages() {
    let (mut cfg, p) = reference();
    cfg.disturbance = None;
    cfg.horizon_s = 300.0;
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    assert_eq!(traj.termination, Termination::HorizonReached);
    let v0 = traj.rows[0].v;
    for r in &traj.rows {
        for b in 0..4 {
            assert!((r.v[b] / v0[b] - 1.0).abs() <= 0.05);
        }
        assert!(r.domega.abs() < 1e-6);
    }
}

#[test]
fn high_motor_share_stalls_first() {
    let (mut cfg, p) = reference();
    cfg.r_motor = 0.6;
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    assert_eq!(traj.instability().unwrap().mechanism, Mechanism::MotorStall);
}

#[test]
fn detection_criteria() {
    let p = SystemParams::default();
    let sim = initialize(&p, &op(550.0, 1500.0, 0.4)).unwrap();
    let w = sim.window(false);
    assert!(detect_instability(&sim.state, &w).is_none());
    let mut s = sim.state.clone();
    s.generator.delta = w.delta_ref + std::f64::consts::TAU;
    assert_eq!(detect_instability(&s, &w).unwrap().mechanism, Mechanism::GeneratorLoss);
    let mut s = sim.state.clone();
    s.motor.slip = 0.97;
    assert_eq!(detect_instability(&s, &w).unwrap().mechanism, Mechanism::MotorStall);
    // Solve failures: motor past its peak-torque slip takes the blame.
    let failed = sim.window(true);
    let mut s = sim.state.clone();
    s.motor.slip = 1.5 * s.motor.peak_slip();
    assert_eq!(detect_instability(&s, &failed).unwrap().mechanism, Mechanism::MotorStall);
    let s = sim.state.clone();
    assert_eq!(detect_instability(&s, &failed).unwrap().mechanism, Mechanism::GeneratorLoss);
}

#[test]
fn no_short_term_equilibrium_just_before_collapse() {
    let (cfg, p) = reference();
    let collapse = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0))
        .unwrap()
        .instability()
        .unwrap()
        .time;
    let mut sim = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
    run_until(&mut sim, collapse - 2.0, |_| {});
    assert!(solve_short_term_equilibrium(&sim, &SlowVars::from_state(&sim.state)).is_none());
    // Shortly after the trip the post-disturbance equilibrium still exists.
    let mut early = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
    run_until(&mut early, 20.0, |_| {});
    assert!(solve_short_term_equilibrium(&early, &SlowVars::from_state(&early.state)).is_some());
}

#[test]
fn oxl_cap_latches() {
    let (cfg, p) = reference();
    let mut sim = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
    let mut last: Option<f64> = None;
    let mut violations = 0;
    let mut active_seen = false;
    while sim.instability.is_none() && sim.state.time < cfg.horizon_s {
        if sim.advance(sim.h_int()).is_some() {
            break;
        }
        let ex = &sim.state.exciter;
        if ex.oxl_active && sim.field_current() > ex.if_lim {
            active_seen = true;
            let e = ex.applied_efd(ex.efd);
            if let Some(prev) = last {
                if e > prev + 1e-12 {
                    violations += 1;
                }
            }
            last = Some(e);
        } else {
            last = None;
        }
    }
    assert!(active_seen);
    assert_eq!(violations, 0);
}

#[test]
fn trajectories_are_bit_identical_for_equal_seeds() {
    let (mut cfg, p) = reference();
    cfg.noise.sigma_demand_mw = 5.0;
    cfg.r_motor = 0.2;
    cfg.noise.sigma_ratio = 0.05;
    let a = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(9)).unwrap();
    let b = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(9)).unwrap();
    assert_eq!(a.rows, b.rows);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let c = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(10)).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn trajectory_csv_header() {
    let (mut cfg, p) = reference();
    cfg.horizon_s = 1.0;
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    let mut out = Vec::new();
    traj.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,V1,V2,V3,V4,delta,domega,Eq,Efd,Xoxl,slip,tap,V3ref,event"
    );
    assert_eq!(text.lines().count(), traj.rows.len() + 1);
}
