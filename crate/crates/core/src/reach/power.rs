//! The four-bus system as an MDP plant.

use serde::{Deserialize, Serialize};
use std::io::Write;

use super::env::{EpisodeConfig, Plant, ReachEnv, RewardVector, Status};
use super::episode::{EpisodeOutcome, Policy};
use crate::error::{Error, Result};
use crate::powersys::network::TIE_A;
use crate::powersys::scenario::NoiseConfig;
use crate::powersys::{initialize, DisturbanceSpec, Mechanism, OperatingPoint, Simulator, SystemParams};
use crate::rng::RandomStream;

/// Affine ranges mapped to [-1, 1] for the learner input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationScale {
    pub v4: [f64; 2],
    pub eq_prime: [f64; 2],
    pub x_oxl: [f64; 2],
    pub p_g_mw: [f64; 2],
    pub r_motor: [f64; 2],
    pub v3_ref: [f64; 2],
}

impl Default for ObservationScale {
    fn default() -> Self {
        Self {
            v4: [0.5, 1.1],
            eq_prime: [0.4, 1.4],
            x_oxl: [0.0, 40.0],
            p_g_mw: [300.0, 800.0],
            r_motor: [0.0, 1.0],
            v3_ref: [0.9, 1.1],
        }
    }
}

fn scale(x: f64, r: [f64; 2]) -> f64 {
    2.0 * (x - r[0]) / (r[1] - r[0]) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerEnvConfig {
    /// Nominal generator dispatch (MW).
    pub p_g_mw: f64,
    /// When set, the dispatch is drawn uniformly from this range at reset.
    pub p_g_range_mw: Option<[f64; 2]>,
    pub r_motor: f64,
    pub r_motor_range: Option<[f64; 2]>,
    pub p_total_mw: f64,
    pub noise: NoiseConfig,
    /// Applied at reset when its time is not positive.
    #[serde(with = "crate::powersys::state::optional_disturbance")]
    pub disturbance: Option<DisturbanceSpec>,
    pub action_scale: f64,
    pub v3_ref_bounds: [f64; 2],
    /// Append V3_ref to the observation.
    pub observe_v3_ref: bool,
    /// Perturbation draws tried before a reset gives up.
    pub init_attempts: usize,
    pub scale: ObservationScale,
}

impl Default for PowerEnvConfig {
    fn default() -> Self {
        Self {
            p_g_mw: 550.0,
            p_g_range_mw: None,
            r_motor: 0.0,
            r_motor_range: None,
            p_total_mw: 1500.0,
            noise: NoiseConfig {
                sigma_demand_mw: 5.0,
                sigma_ratio: 0.05,
            },
            disturbance: Some(DisturbanceSpec {
                time: 0.0,
                branch: TIE_A.to_string(),
            }),
            action_scale: 0.1,
            v3_ref_bounds: [0.9, 1.1],
            observe_v3_ref: false,
            init_attempts: 20,
            scale: ObservationScale::default(),
        }
    }
}

impl PowerEnvConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.v3_ref_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("power.v3_ref_bounds must satisfy 0 < lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&self.r_motor) {
            return Err(Error::Config("power.r_motor must lie in [0, 1]".into()));
        }
        if let Some([a, b]) = self.r_motor_range {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return Err(Error::Config("power.r_motor_range must be within [0, 1]".into()));
            }
        }
        if let Some([a, b]) = self.p_g_range_mw {
            if !(0.0 <= a && a <= b) {
                return Err(Error::Config("power.p_g_range_mw must be ordered".into()));
            }
        }
        if !(self.p_total_mw > 0.0) || self.p_g_mw < 0.0 {
            return Err(Error::Config("power demand and dispatch must be positive".into()));
        }
        if self.init_attempts == 0 {
            return Err(Error::Config("power.init_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// M = 1 when no motor load can appear.
    pub fn mechanisms(&self) -> usize {
        let r_max = self.r_motor_range.map_or(self.r_motor, |r| r[1]);
        if r_max > 0.0 {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerPlant {
    pub params: SystemParams,
    pub config: PowerEnvConfig,
    pub sim: Option<Simulator>,
    /// Nominal operating condition of the current episode.
    pub p_g_mw: f64,
    pub r_motor: f64,
}

impl PowerPlant {
    pub fn new(params: SystemParams, config: PowerEnvConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        Ok(Self {
            p_g_mw: config.p_g_mw,
            r_motor: config.r_motor,
            params,
            config,
            sim: None,
        })
    }

    pub fn sim(&self) -> &Simulator {
        self.sim.as_ref().expect("plant used before reset")
    }

    pub fn v3_ref(&self) -> f64 {
        self.sim().state.ltc.v3_ref
    }

    fn mechanism_index(&self, m: Mechanism) -> usize {
        m.index().min(self.config.mechanisms() - 1)
    }
}

impl Plant for PowerPlant {
    fn mechanisms(&self) -> usize {
        self.config.mechanisms()
    }

    /// `[V4, E'q, X_oxl, P_g, R_motor]` with the nominal operating condition.
    fn observe(&self) -> Vec<f64> {
        let (v4, eq, x) = match &self.sim {
            Some(sim) => {
                let o = sim.observation();
                (o.v[3], o.eq_prime, o.x_oxl)
            }
            None => (1.0, 1.0, 0.0),
        };
        let r = if self.mechanisms() == 1 { 0.0 } else { self.r_motor };
        let mut z = vec![v4, eq, x, self.p_g_mw, r];
        if self.config.observe_v3_ref {
            z.push(self.sim.as_ref().map_or(1.0, |s| s.state.ltc.v3_ref));
        }
        z
    }

    fn normalize(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.config.scale;
        let ranges = [s.v4, s.eq_prime, s.x_oxl, s.p_g_mw, s.r_motor, s.v3_ref];
        z.iter().zip(ranges).map(|(&x, r)| scale(x, r)).collect()
    }

    fn reset(&mut self, rng: &mut RandomStream) -> Result<()> {
        let c = &self.config;
        let mut last_err = None;
        for _ in 0..c.init_attempts {
            let p_g = c.p_g_range_mw.map_or(c.p_g_mw, |[a, b]| rng.uniform_range(a, b));
            let r_nom = c.r_motor_range.map_or(c.r_motor, |[a, b]| rng.uniform_range(a, b));
            let (p_total, r) = c.noise.sample(c.p_total_mw, r_nom, rng);
            let op = OperatingPoint {
                p_g_mw: p_g,
                p_total_mw: p_total,
                r_motor: r,
            };
            match initialize(&self.params, &op) {
                Ok(mut sim) => {
                    match &c.disturbance {
                        Some(d) if d.time <= 0.0 => {
                            if sim.apply_disturbance(&d.branch).is_err() {
                                sim.advance_failed();
                            }
                        }
                        d => sim.pending_disturbance = d.clone(),
                    }
                    self.p_g_mw = p_g;
                    self.r_motor = r_nom;
                    self.sim = Some(sim);
                    return Ok(());
                }
                Err(e @ Error::InfeasibleInitialCondition(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::InfeasibleInitialCondition("no attempt made".into())))
    }

    fn violated(&self) -> Option<usize> {
        let m = self.sim.as_ref()?.instability.as_ref()?.mechanism;
        Some(self.mechanism_index(m))
    }

    fn advance(&mut self, action: f64, dt: f64, rng: &mut RandomStream) -> Option<usize> {
        let c = self.config.clone();
        let r_nom = self.r_motor;
        let sim = self.sim.as_mut().expect("plant used before reset");
        if let Some(ev) = &sim.instability {
            let m = ev.mechanism;
            return Some(self.mechanism_index(m));
        }
        let v3 = (sim.state.ltc.v3_ref + c.action_scale * action).clamp(c.v3_ref_bounds[0], c.v3_ref_bounds[1]);
        sim.set_v3_ref(v3);
        let (p, r) = c.noise.sample(c.p_total_mw, r_nom, rng);
        let ev = match sim.set_demand(p, r) {
            Ok(()) => sim.advance(dt),
            Err(_) => sim.advance_failed(),
        };
        ev.map(|e| self.mechanism_index(e.mechanism))
    }
}

pub type PowerEnv = ReachEnv<PowerPlant>;

pub const EPISODE_HEADER: &str = "k,h,V4,Eq,Xoxl,Pg,Rmotor,action,V3ref,r_total,r_gen,r_motor,status";

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub k: usize,
    pub h: f64,
    pub z: Vec<f64>,
    /// Action taken from this state (NaN at terminal states).
    pub action: f64,
    pub v3_ref: f64,
    pub reward: RewardVector,
    pub status: Status,
}

/// Runs a collapsed-termination episode and records every visited state.
pub fn run_logged_episode(
    env: &mut PowerEnv,
    policy: &dyn Policy,
    rng: &mut RandomStream,
) -> Result<(EpisodeOutcome, Vec<EpisodeRow>)> {
    let s0 = env.reset(rng)?;
    let mut ret = env.collapsed_reward(&s0);
    let mut rows = Vec::new();
    let mut s = s0.clone();
    let mut r = ret.clone();
    let mut k = 0;
    loop {
        let terminal = env.is_terminal(&s);
        let a = if terminal { f64::NAN } else { policy.action(&s) };
        rows.push(EpisodeRow {
            k,
            h: s.h,
            z: s.z.clone(),
            action: a,
            v3_ref: env.plant.v3_ref(),
            reward: r.clone(),
            status: s.status,
        });
        if terminal {
            break;
        }
        let st = env.step(&s, a, rng)?;
        ret.add(&st.reward);
        r = st.reward;
        s = st.state;
        k += 1;
    }
    let first_hit = match s.status {
        Status::Absorbed(m) => Some(m),
        _ => None,
    };
    Ok((
        EpisodeOutcome {
            ret,
            first_hit,
            steps: k,
            initial: s0,
            last: s,
        },
        rows,
    ))
}

pub fn write_episode_csv<W: Write>(rows: &[EpisodeRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{EPISODE_HEADER}")?;
    for row in rows {
        let r_motor = row.reward.mechanism.get(1).copied().unwrap_or(0.0);
        let a = if row.action.is_nan() { String::new() } else { format!("{}", row.action) };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.k,
            row.h,
            row.z[0],
            row.z[1],
            row.z[2],
            row.z[3],
            row.z[4],
            a,
            row.v3_ref,
            row.reward.total,
            row.reward.mechanism[0],
            r_motor,
            row.status.label()
        )?;
    }
    Ok(())
}

/// Shortcut used by tests and tools.
pub fn power_env(params: SystemParams, config: PowerEnvConfig, episode: EpisodeConfig) -> Result<PowerEnv> {
    ReachEnv::new(PowerPlant::new(params, config)?, episode)
}

