//! `voltreach` command-line tool.
//!
//! Exit codes: 0 success, 1 tool failure (bad config, I/O, training
//! abort), 2 usage error, 3 the simulated system became unstable (outputs
//! are still written), 4 a validation check failed.

mod checks;
mod manifest;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use manifest::{verify_against_manifest, Output};
use voltreach::config::{EnvKind, RunConfig};
use voltreach::neural::{curve_header, evaluate_greedy, load_checkpoint, save_checkpoint, CheckpointMeta, CurveRow, Ensemble, Trainer};
use voltreach::oracle::{
    compare_learned_vs_oracle, dp_solve_toy, evaluation_grid, linspace, mc_estimate, risk_surface, toy_env, SurfaceGrid,
};
use voltreach::powersys::scenario::Termination;
use voltreach::powersys::simulate_trajectory;
use voltreach::reach::power::power_env;
use voltreach::reach::{Plant, Policy, ReachEnv, Status, ZeroPolicy};
use voltreach::{Error, RandomStream, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_INSTABILITY: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "voltreach", version, about = "Voltage-collapse reachability toolkit")]
struct Cli {
    /// TOML configuration (defaults are used for omitted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Power,
    Toy,
}

impl From<EnvArg> for EnvKind {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Power => EnvKind::Power,
            EnvArg::Toy => EnvKind::Toy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scenario without corrective action.
    Simulate,
    /// Train the multi-critic TD3 learner.
    Train {
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        /// Total environment steps (a resumed run continues up to this).
        #[arg(long)]
        steps: Option<u64>,
        /// Directory of an earlier run to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Risk surfaces for the baseline and, with a checkpoint, the policy.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte Carlo risk estimate at the configured operating point.
    Mc {
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the invariant checks.
    Validate {
        /// Also verify this checkpoint against its run manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = load_config(&cli)?;
    // Everything that can be rejected up front is checked before the output
    // directory is touched.
    match &cli.command {
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Train { env, steps, resume } => {
            if let Some(e) = env {
                cfg.train.env = (*e).into();
            }
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(dir) = resume {
                for f in ["checkpoint.txt", "trainer_state.txt"] {
                    if !dir.join(f).exists() {
                        return Err(Error::Checkpoint(format!("{} has no {f}", dir.display())));
                    }
                }
            }
            train(&cfg, &cli.out, resume.as_deref())
        }
        Command::Evaluate { checkpoint } => {
            let ens = checkpoint.as_deref().map(load_ensemble).transpose()?;
            evaluate(&cfg, &cli.out, ens.as_ref())
        }
        Command::Mc {
            env,
            checkpoint,
            episodes,
        } => {
            if let Some(n) = episodes {
                cfg.mc.episodes = *n;
            }
            cfg.validate()?;
            let kind = env.map(EnvKind::from).unwrap_or(EnvKind::Power);
            let ens = checkpoint.as_deref().map(load_ensemble).transpose()?;
            mc(&cfg, &cli.out, kind, ens.as_ref())
        }
        Command::Validate { checkpoint } => validate(&cfg, &cli.out, checkpoint.as_deref()),
    }
}

fn io<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Io(e.to_string()))
}

fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let f = fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(load_checkpoint(BufReader::new(f))?.0)
}

fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<u8> {
    let t0 = Instant::now();
    let mut rng = RandomStream::new(cfg.seed);
    let traj = simulate_trajectory(&cfg.scenario, &cfg.system, None, &mut rng)?;
    let mut out = Output::create(out_dir)?;
    let mut csv = Vec::new();
    io(traj.write_csv(&mut csv))?;
    out.write("trajectory.csv", &csv)?;
    let mut ev = String::from("time,event\n");
    for e in &traj.events {
        ev.push_str(&format!("{:.3},{}\n", e.time, e.label()));
    }
    out.write("events.csv", ev.as_bytes())?;
    out.time("simulate", t0);
    let (outcome, code) = match &traj.termination {
        Termination::HorizonReached => ("horizon reached".to_string(), 0),
        Termination::Instability(ev) => (
            format!("instability: {} at {:.2} s ({})", ev.mechanism.label(), ev.time, ev.detail),
            EXIT_INSTABILITY,
        ),
    };
    println!("{outcome}");
    out.finish("simulate", cfg, &outcome)?;
    Ok(code)
}

/// Hash identifying a learner run independently of how long it trains.
fn learner_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.train.steps = 0;
    c.hash()
}

fn train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<u8> {
    let mut episode = cfg.episode.clone();
    episode.sample_horizon = cfg.train.sample_horizon;
    match cfg.train.env {
        EnvKind::Toy => {
            let env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, cfg.train.sample_horizon)?;
            let eval_env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false)?;
            train_loop(cfg, out_dir, resume, env, eval_env, |trainer, out| {
                let dp = dp_solve_toy(&cfg.toy, &cfg.dp)?;
                let mut e = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false)?;
                let states = evaluation_grid(&linspace(1.0, cfg.toy.tau_max, 20), &linspace(0.1, 3.0, 20));
                let report = compare_learned_vs_oracle(&mut e, &trainer.ensemble, &dp, &states);
                println!(
                    "oracle comparison: max |v - v*| = {:.4}, mean = {:.4}, action agreement = {:.3}",
                    report.max_abs_error, report.mean_abs_error, report.action_agreement
                );
                out.write("oracle_report.json", json(&report)?.as_bytes())?;
                let mut csv = Vec::new();
                io(dp.write_csv(&mut csv))?;
                out.write("dp_table.csv", &csv)
            })
        }
        EnvKind::Power => {
            let env = power_env(cfg.system.clone(), cfg.power.clone(), episode)?;
            let mut eval_ep = cfg.episode.clone();
            eval_ep.sample_horizon = false;
            let eval_env = power_env(cfg.system.clone(), cfg.power.clone(), eval_ep)?;
            train_loop(cfg, out_dir, resume, env, eval_env, |_, _| Ok(()))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Io(e.to_string()))
}

fn train_loop<P: Plant + Clone + Send + Sync>(
    cfg: &RunConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    env: ReachEnv<P>,
    eval_env: ReachEnv<P>,
    finish: impl FnOnce(&Trainer<P>, &mut Output) -> Result<()>,
) -> Result<u8> {
    let hash = learner_hash(cfg);
    let mut trainer = match resume {
        Some(dir) => {
            let f = fs::File::open(dir.join("checkpoint.txt")).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let (ens, meta) = load_checkpoint(BufReader::new(f))?;
            if meta.config_hash != hash {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with configuration {}, current is {hash}",
                    meta.config_hash
                )));
            }
            let f = fs::File::open(dir.join("trainer_state.txt")).map_err(|e| Error::Checkpoint(e.to_string()))?;
            Trainer::restore(env, ens, cfg.td3.clone(), BufReader::new(f))?
        }
        None => Trainer::new(env, cfg.td3.clone(), cfg.seed)?,
    };
    let mut out = Output::create(out_dir)?;
    let curve_name = "learning_curve.csv";
    let mut curve = String::new();
    if let Some(dir) = resume {
        curve = fs::read_to_string(dir.join(curve_name)).unwrap_or_default();
    }
    if curve.is_empty() {
        curve = curve_header(trainer.ensemble.mechanisms) + "\n";
    }
    let t0 = Instant::now();
    let sched = &cfg.train;
    let eval_seed = RandomStream::new(cfg.seed).split(7).seed();
    while trainer.env_steps < sched.steps {
        let mut stop = sched.steps;
        for every in [sched.eval_every, sched.checkpoint_every] {
            if every > 0 {
                stop = stop.min((trainer.env_steps / every + 1) * every);
            }
        }
        trainer.run(stop - trainer.env_steps)?;
        let step = trainer.env_steps;
        if sched.eval_every > 0 && step % sched.eval_every == 0 {
            let e = evaluate_greedy(&eval_env, &trainer.ensemble, sched.eval_episodes, eval_seed, cfg.workers)?;
            let row = CurveRow::from_trainer(&trainer, &e);
            let mut buf = Vec::new();
            io(row.write(&mut buf))?;
            curve.push_str(&String::from_utf8_lossy(&buf));
            println!("step {step}: eval risk {:.4} (n = {})", e.risk, e.n);
        }
        if sched.checkpoint_every > 0 && step % sched.checkpoint_every == 0 && step < sched.steps {
            let mut buf = Vec::new();
            save_checkpoint(&trainer.ensemble, &CheckpointMeta { config_hash: hash.clone(), env_steps: step }, &mut buf)?;
            out.write(&format!("checkpoints/step_{step:09}.txt"), &buf)?;
        }
    }
    out.time("train", t0);
    let mut buf = Vec::new();
    save_checkpoint(
        &trainer.ensemble,
        &CheckpointMeta {
            config_hash: hash,
            env_steps: trainer.env_steps,
        },
        &mut buf,
    )?;
    out.write("checkpoint.txt", &buf)?;
    let mut st = Vec::new();
    trainer.save_state(&mut st)?;
    out.write("trainer_state.txt", &st)?;
    out.write(curve_name, curve.as_bytes())?;
    finish(&trainer, &mut out)?;
    println!(
        "trained {} environment steps, {} gradient steps",
        trainer.env_steps,
        trainer.gradient_steps()
    );
    out.finish("train", cfg, "completed")?;
    Ok(0)
}

fn surface_grid(cfg: &RunConfig) -> SurfaceGrid {
    SurfaceGrid {
        taus: cfg.evaluate.taus.clone(),
        p_g_mw: cfg.evaluate.p_g_mw.clone(),
        r_motor: cfg.evaluate.r_motor.clone(),
    }
}

fn evaluate(cfg: &RunConfig, out_dir: &Path, ens: Option<&Ensemble>) -> Result<u8> {
    let grid = surface_grid(cfg);
    let master = RandomStream::new(cfg.seed);
    let n = cfg.evaluate.episodes;
    let t0 = Instant::now();
    let base = risk_surface(&cfg.system, &cfg.power, &cfg.episode, &grid, &ZeroPolicy, n, &master, cfg.workers)?;
    let mut out = Output::create(out_dir)?;
    let mut csv = Vec::new();
    io(base.write_csv(&mut csv))?;
    out.write("surface_baseline.csv", &csv)?;
    out.time("baseline", t0);
    if let Some(ens) = ens {
        let t1 = Instant::now();
        let surf = risk_surface(&cfg.system, &cfg.power, &cfg.episode, &grid, &ens.policy(), n, &master, cfg.workers)?;
        // Extra column: the learned critic's risk at the noise-free initial state.
        let mut text = String::new();
        let mut body = Vec::new();
        io(surf.write_csv(&mut body))?;
        let body = String::from_utf8_lossy(&body).into_owned();
        let mut lines = body.lines();
        text.push_str(lines.next().unwrap_or_default());
        text.push_str(",risk_learned\n");
        for (line, cell) in lines.zip(&surf.cells) {
            let r = learned_risk(cfg, ens, cell.tau, cell.p_g_mw, cell.r_motor).unwrap_or(f64::NAN);
            text.push_str(&format!("{line},{r}\n"));
        }
        out.write("surface_policy.csv", text.as_bytes())?;
        out.time("policy", t1);
    }
    out.finish("evaluate", cfg, "completed")?;
    Ok(0)
}

/// `clip(1 - v_total, 0, 1)` at the nominal initial state of a cell.
fn learned_risk(cfg: &RunConfig, ens: &Ensemble, tau: f64, p_g: f64, r: f64) -> Result<f64> {
    let mut pc = cfg.power.clone();
    pc.p_g_mw = p_g;
    pc.p_g_range_mw = None;
    pc.r_motor = r;
    pc.r_motor_range = None;
    pc.noise.sigma_demand_mw = 0.0;
    pc.noise.sigma_ratio = 0.0;
    let mut ep = cfg.episode.clone();
    ep.horizon_max_s = ep.horizon_max_s.max(tau);
    let mut env = power_env(cfg.system.clone(), pc, ep)?;
    let s = env.reset_with_horizon(tau, &mut RandomStream::new(0))?;
    if s.status != Status::Live {
        return Ok(1.0);
    }
    if s.normalized.len() != ens.state_dim {
        return Err(Error::DimensionMismatch {
            expected: ens.state_dim,
            got: s.normalized.len(),
        });
    }
    Ok(voltreach::reach::risk_from_value(ens.values(&s.normalized).1))
}

fn mc(cfg: &RunConfig, out_dir: &Path, kind: EnvKind, ens: Option<&Ensemble>) -> Result<u8> {
    let master = RandomStream::new(cfg.seed);
    let n = cfg.mc.episodes;
    let t0 = Instant::now();
    let policy: Box<dyn Policy + Sync> = match ens {
        Some(e) => Box::new(e.policy()),
        None => Box::new(ZeroPolicy),
    };
    let est = match kind {
        EnvKind::Toy => {
            let env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false)?;
            mc_estimate(&env, policy.as_ref(), n, &master, cfg.workers)?
        }
        EnvKind::Power => {
            let mut ep = cfg.episode.clone();
            ep.sample_horizon = false;
            let env = power_env(cfg.system.clone(), cfg.power.clone(), ep)?;
            mc_estimate(&env, policy.as_ref(), n, &master, cfg.workers)?
        }
    };
    let mut out = Output::create(out_dir)?;
    out.write("mc.json", json(&est)?.as_bytes())?;
    out.time("mc", t0);
    println!(
        "risk {:.4} [{:.4}, {:.4}] from {} episodes; by mechanism {:?}",
        est.risk, est.lo, est.hi, est.n, est.risk_by_mechanism
    );
    out.finish("mc", cfg, "completed")?;
    Ok(0)
}

fn validate(cfg: &RunConfig, out_dir: &Path, checkpoint: Option<&Path>) -> Result<u8> {
    let t0 = Instant::now();
    let mut results = checks::run_all(cfg);
    if let Some(p) = checkpoint {
        let r = verify_against_manifest(p).and_then(|_| load_ensemble(p).map(|_| ()));
        results.push(checks::CheckResult {
            name: "checkpoint_integrity".into(),
            passed: r.is_ok(),
            detail: r.err().map_or_else(|| format!("{} matches its manifest", p.display()), |e| e.to_string()),
        });
    }
    let passed = results.iter().all(|r| r.passed);
    let mut stdout = std::io::stdout();
    for r in &results {
        let _ = writeln!(stdout, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let mut out = Output::create(out_dir)?;
    let report = serde_json::json!({ "passed": passed, "checks": results });
    out.write("validation.json", json(&report)?.as_bytes())?;
    out.time("validate", t0);
    out.finish("validate", cfg, if passed { "passed" } else { "failed" })?;
    Ok(if passed { 0 } else { EXIT_VALIDATION })
}
