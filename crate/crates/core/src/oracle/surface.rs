//! Risk over a grid of horizons and operating conditions.

use std::io::Write;

use serde::Serialize;

use super::mc::{mc_estimate, McEstimate};
use crate::error::Result;
use crate::powersys::SystemParams;
use crate::reach::power::power_env;
use crate::reach::{EpisodeConfig, Policy, PowerEnvConfig};
use crate::rng::RandomStream;

pub const SURFACE_HEADER: &str = "tau,Pg,Rmotor,n,risk_total,lo,hi,risk_gen,risk_motor";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceCell {
    pub tau: f64,
    pub p_g_mw: f64,
    pub r_motor: f64,
    /// `None` when the cell could not be simulated.
    pub estimate: Option<McEstimate>,
    pub note: Option<String>,
}

impl SurfaceCell {
    pub fn risk_gen(&self) -> f64 {
        self.estimate.as_ref().map_or(f64::NAN, |e| e.risk_by_mechanism[0])
    }

    pub fn risk_motor(&self) -> f64 {
        self.estimate
            .as_ref()
            .map_or(f64::NAN, |e| e.risk_by_mechanism.get(1).copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSurface {
    pub cells: Vec<SurfaceCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub taus: Vec<f64>,
    pub p_g_mw: Vec<f64>,
    pub r_motor: Vec<f64>,
}

/// MC estimate in every `(tau, P_g, R_motor)` cell. All cells share the
/// same episode seed schedule (common random numbers), so cells differ only
/// through the operating condition and horizon.
pub fn risk_surface(
    params: &SystemParams,
    base: &PowerEnvConfig,
    episode: &EpisodeConfig,
    grid: &SurfaceGrid,
    policy: &(dyn Policy + Sync),
    n: usize,
    master: &RandomStream,
    workers: usize,
) -> Result<RiskSurface> {
    let mut cells = Vec::new();
    for &tau in &grid.taus {
        for &p_g in &grid.p_g_mw {
            for &r in &grid.r_motor {
                let mut cfg = base.clone();
                cfg.p_g_mw = p_g;
                cfg.p_g_range_mw = None;
                cfg.r_motor = r;
                cfg.r_motor_range = None;
                let ep = EpisodeConfig {
                    horizon_s: tau,
                    horizon_max_s: episode.horizon_max_s.max(tau),
                    sample_horizon: false,
                    ..episode.clone()
                };
                let cell = match power_env(params.clone(), cfg, ep)
                    .and_then(|env| mc_estimate(&env, policy, n, master, workers))
                {
                    Ok(est) if est.n > 0 => SurfaceCell {
                        tau,
                        p_g_mw: p_g,
                        r_motor: r,
                        estimate: Some(est),
                        note: None,
                    },
                    Ok(_) => SurfaceCell {
                        tau,
                        p_g_mw: p_g,
                        r_motor: r,
                        estimate: None,
                        note: Some("no feasible initial condition".into()),
                    },
                    Err(e) => SurfaceCell {
                        tau,
                        p_g_mw: p_g,
                        r_motor: r,
                        estimate: None,
                        note: Some(e.to_string()),
                    },
                };
                cells.push(cell);
            }
        }
    }
    Ok(RiskSurface { cells })
}

impl RiskSurface {
    /// Infeasible cells are written with `n = 0` and NaN risks.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SURFACE_HEADER}")?;
        for c in &self.cells {
            let (n, risk, lo, hi) = match &c.estimate {
                Some(e) => (e.n, e.risk, e.lo, e.hi),
                None => (0, f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.tau,
                c.p_g_mw,
                c.r_motor,
                n,
                risk,
                lo,
                hi,
                c.risk_gen(),
                c.risk_motor()
            )?;
        }
        Ok(())
    }
}
