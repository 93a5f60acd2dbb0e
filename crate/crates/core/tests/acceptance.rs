//! End-to-end acceptance suite. Runs every criterion in sequence (timings
//! are part of the criteria, so nothing runs concurrently) and prints one
//! PASS/FAIL line per criterion.

use std::time::Instant;

use ndarray::Array2;

use voltreach::config::RunConfig;
use voltreach::neural::{gradient_check, save_checkpoint, Activation, Adam, AdamConfig, CheckpointMeta, Layer, Mlp, Trainer};
use voltreach::oracle::{
    compare_learned_vs_oracle, dp_solve_toy, evaluation_grid, linspace, mc_results, risk_surface, spearman, toy_env,
    EpisodeResult, McEstimate, SurfaceGrid, ToyConfig,
};
use voltreach::powersys::scenario::{scenario_simulator, Termination};
use voltreach::powersys::*;
use voltreach::reach::power::power_env;
use voltreach::reach::{
    run_episode, run_episode_with_horizon, run_literal_episode, AugmentedState, Plant, ReachEnv, ZeroPolicy,
};
use voltreach::RandomStream;

const TOY_SCHEDULE: &str = include_str!("../../../configs/toy.toml");
const POWER_SCHEDULE: &str = include_str!("../../../configs/power.toml");
const SEED: u64 = 2024;

/// Operating point of the mechanism-attribution sweep.
const ATTRIBUTION_P_G: f64 = 575.0;
/// Horizon and dispatch points of the P_g trend.
const TREND_TAU: f64 = 300.0;
const TREND_P_G: [f64; 6] = [500.0, 525.0, 550.0, 575.0, 600.0, 625.0];
const TREND_EPISODES: usize = 300;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn ci(e: &McEstimate) -> String {
    format!("{:.3} [{:.3}, {:.3}]", e.risk, e.lo, e.hi)
}

fn toy_oracle_equivalence() -> Verdict {
    let cfg = RunConfig::from_toml(TOY_SCHEDULE).unwrap();
    let t0 = Instant::now();
    let env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, cfg.train.sample_horizon).unwrap();
    let mut trainer = Trainer::new(env, cfg.td3.clone(), cfg.seed).unwrap();
    trainer.run(cfg.train.steps).unwrap();
    let dp = dp_solve_toy(&cfg.toy, &cfg.dp).unwrap();
    let mut eval = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false).unwrap();
    let states = evaluation_grid(&linspace(1.0, cfg.toy.tau_max, 20), &linspace(0.1, 3.0, 20));
    let r = compare_learned_vs_oracle(&mut eval, &trainer.ensemble, &dp, &states);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        r.max_abs_error <= 0.05 && r.action_agreement >= 0.9 && secs <= 900.0,
        format!(
            "max |v - v*| = {:.4} at {:?}, mean {:.4}, action agreement {:.3}, {} steps in {:.0} s",
            r.max_abs_error, r.worst, r.mean_abs_error, r.action_agreement, cfg.train.steps, secs
        ),
    )
}

fn hashed(s: &AugmentedState) -> f64 {
    (s.z.iter().fold(s.h, |a, v| a * 31.0 + v) * 12.9898).sin()
}

fn return_mismatches<P: Plant + Clone>(env: &ReachEnv<P>, n: u64, seed: u64) -> usize {
    let master = RandomStream::new(seed);
    (0..n)
        .filter(|&i| {
            let mut rng = master.split(i);
            let h0 = env.config.horizon_max_s * (1.0 - rng.uniform());
            let collapsed = run_episode_with_horizon(&mut env.clone(), &hashed, h0, &mut rng.clone()).unwrap();
            let literal = run_literal_episode(&mut env.clone(), &hashed, h0, &mut rng).unwrap();
            collapsed.ret != literal
        })
        .count()
}

fn return_semantics() -> Verdict {
    let mut total = 0;
    let mut bad = 0;
    for upper in [None, Some(3.0)] {
        let toy = ToyConfig {
            upper,
            ..ToyConfig::default()
        };
        bad += return_mismatches(&toy_env(toy.clone(), toy.tau_max, true).unwrap(), 1000, SEED);
        total += 1000;
    }
    let power = voltreach::reach::PowerEnvConfig {
        r_motor: 0.4,
        ..Default::default()
    };
    let env = power_env(SystemParams::default(), power, Default::default()).unwrap();
    bad += return_mismatches(&env, 40, SEED);
    total += 40;
    verdict(bad == 0, format!("{bad} mismatches over {total} episodes (2000 toy, 40 power)"))
}

fn risk_decomposition(mc: &[McEstimate]) -> Verdict {
    let counting = mc.iter().all(|e| {
        e.failures_by_mechanism.iter().sum::<usize>() == e.failures
            && (e.risk_by_mechanism.iter().sum::<f64>() - e.risk).abs() <= 1e-12
    });
    // Two-sided toy: two mechanisms plus a total critic.
    let mut cfg = RunConfig::from_toml(TOY_SCHEDULE).unwrap();
    cfg.toy.upper = Some(3.5);
    cfg.td3.lr_decay_updates = 60_000;
    let env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, true).unwrap();
    let mut trainer = Trainer::new(env, cfg.td3.clone(), cfg.seed).unwrap();
    trainer.run(60_000).unwrap();
    let dp = dp_solve_toy(&cfg.toy, &cfg.dp).unwrap();
    let mut eval = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false).unwrap();
    let states = evaluation_grid(&linspace(1.0, cfg.toy.tau_max, 20), &linspace(0.1, 3.0, 20));
    let r = compare_learned_vs_oracle(&mut eval, &trainer.ensemble, &dp, &states);
    verdict(
        counting && r.max_sum_gap <= 0.1,
        format!(
            "MC counts partition failures in {} estimates: {counting}; learned max |sum(1 - v_m) - (1 - v)| = {:.4} \
             (value error {:.4})",
            mc.len(),
            r.max_sum_gap,
            r.max_abs_error
        ),
    )
}

fn baseline_grid(taus: Vec<f64>, p_g: Vec<f64>, r: Vec<f64>) -> SurfaceGrid {
    SurfaceGrid {
        taus,
        p_g_mw: p_g,
        r_motor: r,
    }
}

fn estimates(s: &voltreach::oracle::RiskSurface) -> Vec<McEstimate> {
    s.cells.iter().map(|c| c.estimate.clone().expect("feasible cell")).collect()
}

fn horizon_monotonicity(mc: &mut Vec<McEstimate>) -> Verdict {
    let t0 = Instant::now();
    let taus = vec![60.0, 120.0, 300.0, 600.0];
    let s = risk_surface(
        &SystemParams::default(),
        &Default::default(),
        &Default::default(),
        &baseline_grid(taus.clone(), vec![550.0], vec![0.0]),
        &ZeroPolicy,
        500,
        &RandomStream::new(SEED),
        1,
    )
    .unwrap();
    let est = estimates(&s);
    let secs = t0.elapsed().as_secs_f64();
    let ok = est.windows(2).all(|w| w[1].risk >= w[0].risk || w[1].hi >= w[0].lo);
    let detail = taus
        .iter()
        .zip(&est)
        .map(|(t, e)| format!("tau {t}: {}", ci(e)))
        .collect::<Vec<_>>()
        .join(", ");
    mc.extend(est);
    verdict(ok && secs <= 1800.0, format!("{detail}; {:.0} s", secs))
}

fn dispatch_trend(mc: &mut Vec<McEstimate>) -> Verdict {
    let s = risk_surface(
        &SystemParams::default(),
        &Default::default(),
        &Default::default(),
        &baseline_grid(vec![TREND_TAU], TREND_P_G.to_vec(), vec![0.0]),
        &ZeroPolicy,
        TREND_EPISODES,
        &RandomStream::new(SEED),
        1,
    )
    .unwrap();
    let est = estimates(&s);
    let risks: Vec<f64> = est.iter().map(|e| e.risk).collect();
    let rho = spearman(&TREND_P_G, &risks);
    mc.extend(est);
    verdict(
        rho >= 0.9,
        format!("Spearman {rho:.3} at tau {TREND_TAU}: P_g {TREND_P_G:?} -> risk {risks:.3?}"),
    )
}

fn corrective_action() -> Verdict {
    let cfg = RunConfig::from_toml(POWER_SCHEDULE).unwrap();
    let t0 = Instant::now();
    let mut ep = cfg.episode.clone();
    ep.sample_horizon = cfg.train.sample_horizon;
    let env = power_env(cfg.system.clone(), cfg.power.clone(), ep).unwrap();
    let mut trainer = Trainer::new(env, cfg.td3.clone(), cfg.seed).unwrap();
    trainer.run(cfg.train.steps).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let grid = baseline_grid(cfg.evaluate.taus.clone(), cfg.evaluate.p_g_mw.clone(), vec![0.0]);
    let master = RandomStream::new(SEED);
    let n = cfg.evaluate.episodes;
    let mut power = cfg.power.clone();
    power.r_motor = 0.0;
    let base = risk_surface(&cfg.system, &power, &cfg.episode, &grid, &ZeroPolicy, n, &master, 1).unwrap();
    let pol = risk_surface(&cfg.system, &power, &cfg.episode, &grid, &trainer.ensemble.policy(), n, &master, 1).unwrap();
    let (mut better, mut worse, mut separated) = (0, 0, 0);
    for (b, p) in estimates(&base).iter().zip(estimates(&pol)) {
        if p.hi < b.lo || p.lo > b.hi {
            separated += 1;
            if p.risk <= b.risk {
                better += 1;
            } else {
                worse += 1;
            }
        }
    }
    let cells = base.cells.len();
    let mean = |s: &voltreach::oracle::RiskSurface| estimates(s).iter().map(|e| e.risk).sum::<f64>() / cells as f64;
    verdict(
        separated > 0 && better as f64 >= 0.8 * separated as f64 && worse == 0,
        format!(
            "{better} of {separated} separated cells better, {worse} worse ({cells} cells, n = {n}); mean risk \
             {:.3} -> {:.3}; trained {} steps in {:.0} s",
            mean(&base),
            mean(&pol),
            cfg.train.steps,
            train_secs
        ),
    )
}

fn mechanism_attribution(mc: &mut Vec<McEstimate>) -> Verdict {
    let rs = vec![0.0, 0.2, 0.4, 0.6];
    let s = risk_surface(
        &SystemParams::default(),
        &Default::default(),
        &Default::default(),
        &baseline_grid(vec![600.0], vec![ATTRIBUTION_P_G], rs.clone()),
        &ZeroPolicy,
        500,
        &RandomStream::new(SEED),
        1,
    )
    .unwrap();
    let est = estimates(&s);
    let share: Vec<f64> = s
        .cells
        .iter()
        .zip(&est)
        .map(|(c, e)| if e.risk > 0.0 { c.risk_motor() / e.risk } else { 0.0 })
        .collect();
    mc.extend(est.iter().cloned());
    let ok = share.windows(2).all(|w| w[1] > w[0]);
    let detail = rs
        .iter()
        .zip(share.iter().zip(&est))
        .map(|(r, (sh, e))| format!("R {r}: share {sh:.3} ({:?})", e.failures_by_mechanism))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(ok, format!("P_g {ATTRIBUTION_P_G}: {detail}"))
}

fn reference_scenario() -> Verdict {
    let cfg = ScenarioConfig::default();
    let p = SystemParams::default();
    let traj = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(0)).unwrap();
    let trip = traj.first_time(|k| matches!(k, EventKind::LineTrip(_)));
    let tap = traj.first_time(|k| matches!(k, EventKind::TapStep { .. }));
    let oxl = traj.first_time(|k| matches!(k, EventKind::OxlActivated));
    let collapse = match &traj.termination {
        Termination::Instability(ev) if ev.mechanism == Mechanism::GeneratorLoss => Some(ev.time),
        _ => None,
    };
    let ordered = matches!((trip, tap, oxl, collapse), (Some(a), Some(b), Some(c), Some(d)) if a < b && b < c && c < d);
    let delay = collapse.zip(trip).map(|(c, t)| c - t);
    let in_window = delay.is_some_and(|d| (200.0..=400.0).contains(&d));
    let mut quiet = cfg.clone();
    quiet.disturbance = None;
    let q = simulate_trajectory(&quiet, &p, None, &mut RandomStream::new(0)).unwrap();
    let survives = matches!(q.termination, Termination::HorizonReached) && q.events.is_empty();
    verdict(
        ordered && in_window && survives,
        format!(
            "trip {trip:.2?}, first tap {tap:.2?}, OXL {oxl:.2?}, generator loss {collapse:.2?} ({:.1} s after trip); \
             undisturbed run survives {} s: {survives}",
            delay.unwrap_or(f64::NAN),
            quiet.horizon_s
        ),
    )
}

fn sampled_fast_vars(cfg: &ScenarioConfig, p: &SystemParams, h: f64, t_end: f64) -> Vec<FastVars> {
    let mut p = p.clone();
    p.solver.h_int = h;
    let mut sim = scenario_simulator(cfg, &p, &mut RandomStream::new(0)).unwrap();
    let every = (1.0 / h).round() as usize;
    let mut out = Vec::new();
    let mut k = 0;
    while sim.state.time + 1e-9 < t_end {
        sim.substep().unwrap();
        k += 1;
        if k % every == 0 {
            out.push(sim.fast_vars());
        }
    }
    out
}

fn numerical_suites() -> Verdict {
    let cfg = ScenarioConfig::default();
    let p = SystemParams::default();
    let mut sim = scenario_simulator(&cfg, &p, &mut RandomStream::new(0)).unwrap();
    let mut residual: f64 = 0.0;
    let mut solves = 0;
    while sim.state.time < cfg.horizon_s {
        if sim.step_slow(1.0).map(|e| e.is_some()).unwrap_or(true) {
            break;
        }
        residual = residual.max(sim.last_solve.as_ref().unwrap().residual);
        solves += 1;
    }
    let mut halving: f64 = 0.0;
    let mut quiet = cfg.clone();
    quiet.disturbance = None;
    for c in [&cfg, &quiet] {
        let coarse = sampled_fast_vars(c, &p, 0.01, 100.0);
        let fine = sampled_fast_vars(c, &p, 0.005, 100.0);
        for (a, b) in coarse.iter().zip(&fine) {
            halving = halving.max(a.max_abs_diff(b));
        }
    }
    let mut rng = RandomStream::new(SEED);
    let mut grad: f64 = 0.0;
    for _ in 0..10 {
        let net = Mlp::new(&[5, 16, 16, 16, 2], Activation::Relu, Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.normal());
        let up = Array2::from_shape_fn((4, 2), |_| rng.normal());
        grad = grad.max(gradient_check(&net, x.view(), up.view(), 1e-5).unwrap().max_rel_error);
    }
    let mut net = Mlp::zeros(&[1, 1], Activation::Linear, Activation::Linear);
    net.layers[0].b[0] = 1.0;
    let mut opt = Adam::new(&net, AdamConfig::with_lr(0.1));
    for _ in 0..200 {
        let mut g = Layer::zeros(1, 1);
        g.b[0] = 2.0 * net.layers[0].b[0];
        opt.step(&mut net, &vec![g]);
    }
    let w = net.layers[0].b[0].abs();
    verdict(
        residual < 1e-8 && halving < 1e-5 && grad < 1e-4 && w < 0.01,
        format!(
            "Newton residual {residual:.1e} over {solves} windows; RK4 halving {halving:.1e}; gradient check \
             {grad:.1e}; Adam |w| {w:.1e} after 200 steps"
        ),
    )
}

fn checkpoint_bytes<P: Plant + Clone + Send + Sync>(env: ReachEnv<P>, cfg: &RunConfig, steps: u64) -> Vec<u8> {
    let mut t = Trainer::new(env, cfg.td3.clone(), cfg.seed).unwrap();
    t.run(steps).unwrap();
    let mut out = Vec::new();
    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        env_steps: t.env_steps,
    };
    save_checkpoint(&t.ensemble, &meta, &mut out).unwrap();
    out
}

fn determinism() -> Verdict {
    let mut cfg = ScenarioConfig::default();
    cfg.r_motor = 0.3;
    cfg.noise.sigma_demand_mw = 5.0;
    cfg.noise.sigma_ratio = 0.05;
    let p = SystemParams::default();
    let a = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(3)).unwrap();
    let b = simulate_trajectory(&cfg, &p, None, &mut RandomStream::new(3)).unwrap();
    let traj = a.rows == b.rows && a.events == b.events;

    let toy = RunConfig::from_toml(TOY_SCHEDULE).unwrap();
    let te = || toy_env(toy.toy.clone(), toy.toy.tau_max, true).unwrap();
    let power = RunConfig::from_toml(POWER_SCHEDULE).unwrap();
    let pe = || power_env(power.system.clone(), power.power.clone(), power.episode.clone()).unwrap();
    let ckpt = checkpoint_bytes(te(), &toy, 3000) == checkpoint_bytes(te(), &toy, 3000)
        && checkpoint_bytes(pe(), &power, 300) == checkpoint_bytes(pe(), &power, 300);

    // Documented reduction: episode i uses master.split(i), results in index order.
    let env = power_env(p.clone(), Default::default(), Default::default()).unwrap();
    let master = RandomStream::new(SEED);
    let n = 24;
    let serial: Vec<EpisodeResult> = (0..n as u64)
        .map(|i| {
            match run_episode(&mut env.clone(), &ZeroPolicy, &mut master.split(i)) {
                Ok(out) => out.first_hit.map_or(EpisodeResult::Safe, EpisodeResult::Failed),
                Err(voltreach::Error::InfeasibleInitialCondition(_)) => EpisodeResult::Skipped,
                Err(e) => panic!("{e}"),
            }
        })
        .collect();
    let mc = [1, 3, 4].iter().all(|&w| mc_results(&env, &ZeroPolicy, n, &master, w).unwrap() == serial);
    verdict(
        traj && ckpt && mc,
        format!("trajectories identical: {traj}; toy and power checkpoints identical: {ckpt}; MC with 1/3/4 workers equals the serial reduction: {mc}"),
    )
}

fn main() {
    // `cargo test` passes filter arguments; this suite always runs in full.
    let started = Instant::now();
    let mut mc = Vec::new();
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    let mut run = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        println!(
            "criterion {id:>2} {} {name}: {} [{:.0} s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((id, name, v));
    };
    run(8, "reference scenario", &mut reference_scenario);
    run(9, "numerical suites", &mut numerical_suites);
    run(10, "determinism", &mut determinism);
    run(2, "return semantics", &mut return_semantics);
    run(1, "toy oracle equivalence", &mut toy_oracle_equivalence);
    run(4, "horizon monotonicity", &mut || horizon_monotonicity(&mut mc));
    run(5, "dispatch trend", &mut || dispatch_trend(&mut mc));
    run(7, "mechanism attribution", &mut || mechanism_attribution(&mut mc));
    run(3, "risk decomposition", &mut || risk_decomposition(&mc));
    run(6, "corrective action", &mut corrective_action);
    results.sort_by_key(|r| r.0);
    println!("\nsummary ({:.0} s):", started.elapsed().as_secs_f64());
    for (id, name, v) in &results {
        println!("  criterion {id:>2} {}  {name}", if v.passed { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.2.passed).count();
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
