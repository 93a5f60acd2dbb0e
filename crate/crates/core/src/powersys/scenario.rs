//! Scenario runs producing full time series.

use serde::{Deserialize, Serialize};
use std::io::Write;

use super::equilibrium::{initialize, OperatingPoint};
use super::network::{BUS_GEN, BUS_HUB, BUS_LOAD, BUS_REMOTE, TIE_A};
use super::params::SystemParams;
use super::sim::{substeps, Simulator};
use super::state::{DisturbanceSpec, EventKind, InstabilityEvent, SimEvent};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Gaussian perturbation of the demand and of the motor ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_demand_mw: f64,
    pub sigma_ratio: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_demand_mw: 0.0,
            sigma_ratio: 0.0,
        }
    }
}

impl NoiseConfig {
    /// Perturbed (total demand, motor ratio) around the nominal values. The
    /// motor ratio is not perturbed when its nominal value is zero.
    pub fn sample(&self, p_total_mw: f64, r_motor: f64, rng: &mut RandomStream) -> (f64, f64) {
        let xi_p = rng.normal();
        let xi_r = rng.normal();
        let p = (p_total_mw + self.sigma_demand_mw * xi_p).max(0.0);
        let r = if r_motor > 0.0 {
            (r_motor + self.sigma_ratio * xi_r).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub p_g_mw: f64,
    pub r_motor: f64,
    pub p_total_mw: f64,
    pub horizon_s: f64,
    #[serde(with = "crate::powersys::state::optional_disturbance")]
    pub disturbance: Option<DisturbanceSpec>,
    /// Interval between control decisions and noise resampling.
    pub decision_step_s: f64,
    pub noise: NoiseConfig,
    /// Record every n-th integration step.
    pub record_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            p_g_mw: 550.0,
            r_motor: 0.0,
            p_total_mw: 1500.0,
            horizon_s: 600.0,
            disturbance: Some(DisturbanceSpec {
                time: 10.0,
                branch: TIE_A.to_string(),
            }),
            decision_step_s: 10.0,
            noise: NoiseConfig::default(),
            record_every: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let h = params.solver.h_int;
        if !(self.horizon_s > 0.0) {
            return Err(Error::Config("scenario.horizon_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.r_motor) {
            return Err(Error::Config("scenario.r_motor must lie in [0, 1]".into()));
        }
        if !(self.p_total_mw > 0.0) || !(self.p_g_mw >= 0.0) {
            return Err(Error::Config("scenario powers must be positive".into()));
        }
        if self.noise.sigma_demand_mw < 0.0 || self.noise.sigma_ratio < 0.0 {
            return Err(Error::Config("scenario.noise sigmas must be non-negative".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("scenario.record_every must be at least 1".into()));
        }
        substeps(self.decision_step_s, h)
            .map_err(|_| Error::Config("scenario.decision_step_s must be a multiple of solver.h_int".into()))?;
        if let Some(d) = &self.disturbance {
            if d.time < 0.0 {
                return Err(Error::Config("scenario.disturbance.time must be non-negative".into()));
            }
        }
        params.validate()
    }
}

/// Supplies a corrective action in [-1, 1] at each decision instant.
pub trait ScenarioPolicy {
    fn action(&mut self, sim: &Simulator, remaining_s: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub v: [f64; 4],
    pub delta: f64,
    pub domega: f64,
    pub eq_prime: f64,
    pub efd: f64,
    pub x_oxl: f64,
    pub slip: f64,
    pub tap: f64,
    pub v3_ref: f64,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    HorizonReached,
    Instability(InstabilityEvent),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<SimEvent>,
    pub termination: Termination,
}

pub const TRAJECTORY_HEADER: &str = "t,V1,V2,V3,V4,delta,domega,Eq,Efd,Xoxl,slip,tap,V3ref,event";

impl Trajectory {
    pub fn instability(&self) -> Option<&InstabilityEvent> {
        match &self.termination {
            Termination::Instability(ev) => Some(ev),
            Termination::HorizonReached => None,
        }
    }

    /// Times of the first event of each kind, in log order.
    pub fn first_time(&self, pred: impl Fn(&EventKind) -> bool) -> Option<f64> {
        self.events.iter().find(|e| pred(&e.kind)).map(|e| e.time)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.v[0],
                r.v[1],
                r.v[2],
                r.v[3],
                r.delta,
                r.domega,
                r.eq_prime,
                r.efd,
                r.x_oxl,
                r.slip,
                r.tap,
                r.v3_ref,
                r.event
            )?;
        }
        Ok(())
    }
}

fn record(sim: &Simulator, event: String) -> TrajectoryRow {
    let s = &sim.state;
    TrajectoryRow {
        t: s.time,
        v: [
            sim.bus_voltage(BUS_REMOTE),
            sim.bus_voltage(BUS_GEN),
            sim.bus_voltage(BUS_LOAD),
            sim.bus_voltage(BUS_HUB),
        ],
        delta: s.generator.delta,
        domega: s.generator.domega,
        eq_prime: s.generator.eq_prime,
        efd: s.exciter.applied_efd(s.exciter.efd),
        x_oxl: s.exciter.x_oxl,
        slip: s.motor.slip,
        tap: s.network.tap(),
        v3_ref: s.ltc.v3_ref,
        event,
    }
}

/// Builds the initial simulator for a scenario (with the demand noise of
/// the first decision interval applied to the operating point).
pub fn scenario_simulator(config: &ScenarioConfig, params: &SystemParams, rng: &mut RandomStream) -> Result<Simulator> {
    let (p_total, r_motor) = config.noise.sample(config.p_total_mw, config.r_motor, rng);
    let mut sim = initialize(
        params,
        &OperatingPoint {
            p_g_mw: config.p_g_mw,
            p_total_mw: p_total,
            r_motor,
        },
    )?;
    sim.pending_disturbance = config.disturbance.clone();
    Ok(sim)
}

/// Runs a scenario from its pre-disturbance steady state up to the horizon
/// or the first instability.
pub fn simulate_trajectory(
    config: &ScenarioConfig,
    params: &SystemParams,
    mut policy: Option<&mut dyn ScenarioPolicy>,
    rng: &mut RandomStream,
) -> Result<Trajectory> {
    config.validate(params)?;
    let mut sim = scenario_simulator(config, params, rng)?;
    let h = params.solver.h_int;
    let per_decision = substeps(config.decision_step_s, h)?;
    let total = (config.horizon_s / h).round() as usize;
    let mut rows = vec![record(&sim, String::new())];
    let mut logged = sim.state.events.len();
    let mut termination = Termination::HorizonReached;
    for k in 0..total {
        if k % per_decision == 0 {
            if k > 0 {
                let (p, r) = config.noise.sample(config.p_total_mw, config.r_motor, rng);
                if sim.set_demand(p, r).is_err() {
                    if let Some(ev) = sim.advance_failed() {
                        termination = Termination::Instability(ev);
                        break;
                    }
                }
            }
            if let Some(p) = policy.as_deref_mut() {
                let remaining = config.horizon_s - sim.state.time;
                let a = p.action(&sim, remaining).clamp(-1.0, 1.0);
                let v3 = (sim.state.ltc.v3_ref + 0.1 * a).clamp(0.9, 1.1);
                sim.set_v3_ref(v3);
            }
        }
        let ev = sim.advance(h);
        let new_events = &sim.state.events[logged..];
        let label = new_events.iter().map(|e| e.label()).collect::<Vec<_>>().join(";");
        logged = sim.state.events.len();
        if (k + 1) % config.record_every == 0 || ev.is_some() || !label.is_empty() {
            rows.push(record(&sim, label));
        }
        if let Some(ev) = ev {
            termination = Termination::Instability(ev);
            break;
        }
    }
    Ok(Trajectory {
        rows,
        events: sim.state.events.clone(),
        termination,
    })
}
