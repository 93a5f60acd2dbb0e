//! Learned critic/actor versus the DP oracle on the toy plant.

use serde::Serialize;

use super::dp::{DpTable, Quadrature};
use super::toy::ToyEnv;
use crate::neural::Ensemble;
use crate::reach::Status;

/// Q-value slack within which a learned action counts as optimal (actions
/// are often nearly tied, e.g. far from the boundary).
pub const ACTION_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub states: usize,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// State with the largest value error.
    pub worst: (f64, f64),
    /// Fraction of states where the learned action is optimal within
    /// [`ACTION_TOLERANCE`].
    pub action_agreement: f64,
    pub max_sum_gap: f64,
}

/// `hs x zs` evaluation grid.
pub fn evaluation_grid(hs: &[f64], zs: &[f64]) -> Vec<(f64, f64)> {
    hs.iter().flat_map(|&h| zs.iter().map(move |&z| (h, z))).collect()
}

/// `n` evenly spaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Compares learned values `Q_1(s, mu(s))` with the DP value at every
/// `(h, z)` and checks the learned action against the DP Q-function.
/// `max_sum_gap` is `max |sum_m (1 - v^m) - (1 - v_total)|` over the states.
pub fn compare_learned_vs_oracle(
    env: &mut ToyEnv,
    ensemble: &Ensemble,
    dp: &DpTable,
    states: &[(f64, f64)],
) -> ComparisonReport {
    let toy = env.plant.config.clone();
    let quad = Quadrature::new(dp.grid.quad_order);
    let mut max_err = f64::NEG_INFINITY;
    let mut sum_err = 0.0;
    let mut worst = (f64::NAN, f64::NAN);
    let mut agree = 0usize;
    let mut max_gap: f64 = 0.0;
    for &(h, z) in states {
        env.plant.z = z;
        let s = env.make_state(h, Status::Live);
        let (mech, total) = ensemble.values(&s.normalized);
        let err = (total - dp.value_at(h, z, &toy)).abs();
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > max_err {
            max_err = err;
            worst = (h, z);
        }
        sum_err += err;
        let a = ensemble.act(&s.normalized);
        let q_best = dp.value_at(h, z, &toy);
        if dp.q_value(&toy, &quad, h, z, a) >= q_best - ACTION_TOLERANCE {
            agree += 1;
        }
        let gap = mech.iter().map(|v| 1.0 - v).sum::<f64>() - (1.0 - total);
        max_gap = max_gap.max(gap.abs());
    }
    let n = states.len().max(1) as f64;
    ComparisonReport {
        states: states.len(),
        max_abs_error: max_err.max(0.0),
        mean_abs_error: sum_err / n,
        worst,
        action_agreement: agree as f64 / n,
        max_sum_gap: max_gap,
    }
}
