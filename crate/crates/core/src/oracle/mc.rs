//! Monte Carlo risk estimation.
//!
//! Episode `i` draws all of its randomness from `master.split(i)`. Workers
//! take contiguous index blocks and results are concatenated in index
//! order, so the estimate is the same for any worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::reach::{run_episode, Plant, Policy, ReachEnv};
use crate::rng::RandomStream;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Clamp so lo <= p <= hi survives rounding at the endpoints.
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// Outcome of a single Monte Carlo episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeResult {
    Safe,
    Failed(usize),
    /// The episode could not be initialized.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    /// Episodes that ran to completion.
    pub n: usize,
    pub failures: usize,
    pub failures_by_mechanism: Vec<usize>,
    /// Episodes whose initialization failed (excluded from `n`).
    pub skipped: usize,
    pub risk: f64,
    pub lo: f64,
    pub hi: f64,
    pub risk_by_mechanism: Vec<f64>,
    pub ci_by_mechanism: Vec<(f64, f64)>,
}

impl McEstimate {
    pub fn from_results(results: &[EpisodeResult], mechanisms: usize) -> Self {
        let mut by_m = vec![0usize; mechanisms];
        let mut n = 0;
        let mut skipped = 0;
        for r in results {
            match *r {
                EpisodeResult::Safe => n += 1,
                EpisodeResult::Failed(m) => {
                    n += 1;
                    by_m[m] += 1;
                }
                EpisodeResult::Skipped => skipped += 1,
            }
        }
        let failures: usize = by_m.iter().sum();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let (lo, hi) = wilson(failures, n, Z95);
        Self {
            n,
            failures,
            skipped,
            risk: frac(failures),
            lo,
            hi,
            risk_by_mechanism: by_m.iter().map(|&k| frac(k)).collect(),
            ci_by_mechanism: by_m.iter().map(|&k| wilson(k, n, Z95)).collect(),
            failures_by_mechanism: by_m,
        }
    }

    pub fn safety(&self) -> f64 {
        1.0 - self.risk
    }

    /// Binomial standard error of the risk.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.risk * (1.0 - self.risk) / self.n as f64).sqrt()
    }

    /// Fraction of failures attributed to mechanism `m` (0 without failures).
    pub fn share(&self, m: usize) -> f64 {
        if self.failures == 0 {
            0.0
        } else {
            self.failures_by_mechanism[m] as f64 / self.failures as f64
        }
    }

    /// Whether the two 95% intervals are disjoint.
    pub fn separated_from(&self, other: &McEstimate) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

/// Runs episode `index` of the schedule rooted at `master`.
pub fn run_indexed<P: Plant>(
    env: &mut ReachEnv<P>,
    policy: &dyn Policy,
    master: &RandomStream,
    index: u64,
) -> Result<EpisodeResult> {
    let mut rng = master.split(index);
    match run_episode(env, policy, &mut rng) {
        Ok(out) => Ok(out.first_hit.map_or(EpisodeResult::Safe, EpisodeResult::Failed)),
        Err(Error::InfeasibleInitialCondition(_)) => Ok(EpisodeResult::Skipped),
        Err(e) => Err(e),
    }
}

/// Per-episode results in index order, computed with `workers` threads
/// (0 = all cores).
pub fn mc_results<P>(
    env: &ReachEnv<P>,
    policy: &(dyn Policy + Sync),
    n: usize,
    master: &RandomStream,
    workers: usize,
) -> Result<Vec<EpisodeResult>>
where
    P: Plant + Clone + Send + Sync,
{
    if n == 0 {
        return Err(Error::Config("Monte Carlo needs at least one episode".into()));
    }
    let workers = if workers == 0 { rayon::current_num_threads() } else { workers }.clamp(1, n);
    if workers == 1 {
        let mut env = env.clone();
        return (0..n as u64).map(|i| run_indexed(&mut env, policy, master, i)).collect();
    }
    let chunk = n.div_ceil(workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let blocks: Vec<Result<Vec<EpisodeResult>>> = pool.install(|| {
        (0..workers)
            .into_par_iter()
            .map(|w| {
                let mut env = env.clone();
                let start = w * chunk;
                let end = ((w + 1) * chunk).min(n);
                (start..end)
                    .map(|i| run_indexed(&mut env, policy, master, i as u64))
                    .collect()
            })
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Risk estimate from `n` episodes under `policy`.
pub fn mc_estimate<P>(
    env: &ReachEnv<P>,
    policy: &(dyn Policy + Sync),
    n: usize,
    master: &RandomStream,
    workers: usize,
) -> Result<McEstimate>
where
    P: Plant + Clone + Send + Sync,
{
    let results = mc_results(env, policy, n, master, workers)?;
    Ok(McEstimate::from_results(&results, env.mechanisms()))
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns NaN when either sample is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman: length mismatch");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
