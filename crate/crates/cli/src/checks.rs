//! Invariant checks run by `voltreach validate`.

use ndarray::Array2;
use serde::Serialize;

use voltreach::config::RunConfig;
use voltreach::neural::{gradient_check, Activation, Adam, AdamConfig, Layer, Mlp};
use voltreach::oracle::{dp_solve_toy, mc_estimate, toy_env, ToyConfig};
use voltreach::reach::power::power_env;
use voltreach::reach::{run_episode_with_horizon, run_literal_episode, AugmentedState, Plant, ReachEnv};
use voltreach::{RandomStream, Result};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Random policy keyed on the state, so collapsed and literal rollouts see
/// the same actions.
fn hashed_policy(s: &AugmentedState) -> f64 {
    let x = s.z.iter().fold(s.h, |acc, v| acc * 31.0 + v);
    (x * 12.9898).sin()
}

fn return_mismatches<P: Plant + Clone>(env: &ReachEnv<P>, episodes: usize, seed: u64) -> Result<usize> {
    let master = RandomStream::new(seed);
    let mut bad = 0;
    for i in 0..episodes as u64 {
        let mut rng = master.split(i);
        let h0 = env.config.horizon_max_s * (1.0 - rng.uniform());
        let mut a = env.clone();
        let mut b = env.clone();
        let collapsed = run_episode_with_horizon(&mut a, &hashed_policy, h0, &mut rng.clone())?;
        let literal = run_literal_episode(&mut b, &hashed_policy, h0, &mut rng)?;
        if collapsed.ret != literal {
            bad += 1;
        }
    }
    Ok(bad)
}

pub fn run_all(cfg: &RunConfig) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let two_sided = ToyConfig {
        upper: Some(3.0),
        ..cfg.toy.clone()
    };
    out.push(check("return_equivalence_toy", || {
        let mut bad = 0;
        for toy in [cfg.toy.clone(), two_sided.clone()] {
            let env = toy_env(toy.clone(), toy.tau_max, true)?;
            bad += return_mismatches(&env, 1000, cfg.seed)?;
        }
        Ok((bad == 0, format!("{bad} mismatches over 2000 episodes")))
    }));
    out.push(check("return_equivalence_power", || {
        let mut pc = cfg.power.clone();
        pc.r_motor = pc.r_motor.max(0.4);
        let env = power_env(cfg.system.clone(), pc, cfg.episode.clone())?;
        let bad = return_mismatches(&env, 20, cfg.seed)?;
        Ok((bad == 0, format!("{bad} mismatches over 20 episodes")))
    }));
    out.push(check("risk_decomposition", || {
        let toy = ToyConfig {
            sigma: 0.8,
            ..two_sided.clone()
        };
        let env = toy_env(toy, 10.0, false)?;
        let policy = |s: &AugmentedState| if s.z[0] > 1.5 { -1.0 } else { 1.0 };
        let e = mc_estimate(&env, &policy, 2000, &RandomStream::new(cfg.seed), cfg.workers)?;
        let sum: usize = e.failures_by_mechanism.iter().sum();
        Ok((sum == e.failures, format!("{:?} partition {} failures", e.failures_by_mechanism, e.failures)))
    }));
    out.push(check("dp_coverage_and_monotonicity", || {
        let dp = dp_solve_toy(&cfg.toy, &cfg.dp)?;
        let mut worst: f64 = 0.0;
        for n in 1..=dp.n_max() {
            for j in 0..dp.grid.n_z {
                worst = worst.max(dp.value[[n, j]] - dp.value[[n - 1, j]]);
                if j > 0 {
                    worst = worst.max(dp.value[[n, j - 1]] - dp.value[[n, j]]);
                }
            }
        }
        Ok((worst <= 1e-12, format!("largest monotonicity violation {worst:.3e}")))
    }));
    out.push(check("mlp_gradient", || {
        let mut rng = RandomStream::new(cfg.seed ^ 0x9e37);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let net = Mlp::new(&[5, 16, 16, 16, 2], Activation::Relu, Activation::Tanh, &mut rng);
            let x = Array2::from_shape_fn((4, 5), |_| rng.normal());
            let up = Array2::from_shape_fn((4, 2), |_| rng.normal());
            worst = worst.max(gradient_check(&net, x.view(), up.view(), 1e-5)?.max_rel_error);
        }
        Ok((worst < 1e-4, format!("max relative error {worst:.3e}")))
    }));
    out.push(check("adam_quadratic", || {
        let mut net = Mlp::zeros(&[1, 1], Activation::Linear, Activation::Linear);
        net.layers[0].b[0] = 1.0;
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.1));
        for _ in 0..200 {
            let w = net.layers[0].b[0];
            let mut g = Layer::zeros(1, 1);
            g.b[0] = 2.0 * w;
            opt.step(&mut net, &vec![g]);
        }
        let w = net.layers[0].b[0];
        Ok((w.abs() < 0.01, format!("|w| = {:.3e} after 200 steps", w.abs())))
    }));
    out
}
