//! Partitioned slow/fast time simulation.
//!
//! Fast states (rotor angle, speed, transient EMF, AVR output, motor slip)
//! are integrated with classical RK4, re-solving the network at every stage.
//! Slow states (LTC tap, OXL timer) are updated between fast steps.

use num_complex::Complex64;

use super::detect::{detect_instability, TrajectoryWindow};
use super::network::{
    GeneratorPort, NetworkEquations, NetworkModel, NetworkSolution, StatorDq, BUS_GEN, BUS_HUB,
    BUS_LOAD, BUS_REMOTE, N_BUS,
};
use super::params::SystemParams;
use super::state::*;
use crate::error::{Error, Result};

/// Fast variables in integration order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FastVars {
    pub delta: f64,
    pub domega: f64,
    pub eq_prime: f64,
    pub efd: f64,
    pub slip: f64,
}

impl FastVars {
    fn axpy(&self, a: f64, d: &FastVars) -> FastVars {
        FastVars {
            delta: self.delta + a * d.delta,
            domega: self.domega + a * d.domega,
            eq_prime: self.eq_prime + a * d.eq_prime,
            efd: self.efd + a * d.efd,
            slip: self.slip + a * d.slip,
        }
    }

    pub fn max_abs_diff(&self, o: &FastVars) -> f64 {
        [
            self.delta - o.delta,
            self.domega - o.domega,
            self.eq_prime - o.eq_prime,
            self.efd - o.efd,
            self.slip - o.slip,
        ]
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Simulator instance: the dynamic state plus solver settings.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub state: SimState,
    pub params: SystemParams,
    /// Rotor angle the pole-slip criterion is measured against.
    pub delta_ref: f64,
    pub pending_disturbance: Option<DisturbanceSpec>,
    pub last_solve: Option<NetworkSolution>,
    /// First instability detected, if any.
    pub instability: Option<InstabilityEvent>,
}

impl Simulator {
    pub fn new(state: SimState, params: SystemParams) -> Self {
        let delta_ref = state.generator.delta;
        Self {
            state,
            params,
            delta_ref,
            pending_disturbance: None,
            last_solve: None,
            instability: None,
        }
    }

    pub fn h_int(&self) -> f64 {
        self.params.solver.h_int
    }

    pub fn fast_vars(&self) -> FastVars {
        let s = &self.state;
        FastVars {
            delta: s.generator.delta,
            domega: s.generator.domega,
            eq_prime: s.generator.eq_prime,
            efd: s.exciter.efd,
            slip: s.motor.slip,
        }
    }

    fn set_fast_vars(&mut self, y: &FastVars) {
        let s = &mut self.state;
        s.generator.delta = y.delta;
        s.generator.domega = y.domega;
        s.generator.eq_prime = y.eq_prime;
        s.exciter.efd = y.efd.clamp(0.0, s.exciter.efd_max);
        s.motor.slip = y.slip.clamp(0.0, 1.0);
    }

    pub fn generator_port(&self, y: &FastVars) -> Option<GeneratorPort> {
        let g = &self.state.generator;
        g.online.then_some(GeneratorPort {
            bus: BUS_GEN,
            delta: y.delta,
            eq_prime: y.eq_prime,
            xd_prime: g.xd_prime,
            xq: g.xq,
        })
    }

    /// Network equations for the given fast variables and the current slow state.
    pub fn network_equations(&self, y: &FastVars) -> NetworkEquations {
        network_equations(&self.state, y, self.params.base.s_base_mva)
    }

    /// Solves the network at fast variables `y`, warm-starting from `warm`
    /// and falling back to a flat start.
    pub(crate) fn solve_at(&self, y: &FastVars, warm: &[Complex64]) -> Result<NetworkSolution> {
        let eqs = self.network_equations(y);
        let sp = &self.params.solver;
        match eqs.solve(warm, sp.newton_tol, sp.max_iter) {
            Ok(sol) => Ok(sol),
            Err(first) => {
                let flat = vec![Complex64::new(1.0, 0.0); N_BUS];
                eqs.solve(&flat, sp.newton_tol, sp.max_iter).map_err(|_| first)
            }
        }
    }

    /// Re-solves the network at the current state and caches the voltages.
    pub fn solve_network(&mut self) -> Result<NetworkSolution> {
        let y = self.fast_vars();
        let sol = self.solve_at(&y, &self.state.voltages)?;
        self.state.voltages.copy_from_slice(&sol.voltages);
        self.last_solve = Some(sol.clone());
        Ok(sol)
    }

    pub fn stator(&self) -> Option<StatorDq> {
        self.generator_port(&self.fast_vars())
            .map(|g| g.stator(self.state.voltages[BUS_GEN]))
    }

    pub fn field_current(&self) -> f64 {
        match self.stator() {
            Some(dq) => self.state.generator.field_current(dq.id),
            None => 0.0,
        }
    }

    pub fn bus_voltage(&self, bus: usize) -> f64 {
        self.state.voltages[bus].norm()
    }

    /// Time derivatives of the fast variables at `y` with network solution `v`.
    pub fn derivatives(&self, y: &FastVars, v: &[Complex64]) -> FastVars {
        let s = &self.state;
        let g = &s.generator;
        let ex = &s.exciter;
        let m = &s.motor;
        let mut d = FastVars::default();
        if let Some(port) = self.generator_port(y) {
            let dq = port.stator(v[BUS_GEN]);
            let pe = dq.electrical_power();
            d.delta = self.params.omega_s() * y.domega;
            d.domega = (g.p_m - pe - g.d * y.domega) / (2.0 * g.h);
            let efd_applied = ex.applied_efd(y.efd);
            d.eq_prime = (efd_applied - y.eq_prime - (g.xd - g.xd_prime) * dq.id) / g.td0_prime;
            let mut def = (ex.ka * (ex.v_ref - v[BUS_GEN].norm()) - y.efd) / ex.ta;
            if (y.efd >= ex.efd_max && def > 0.0) || (y.efd <= 0.0 && def < 0.0) {
                def = 0.0;
            }
            d.efd = def;
        }
        if m.active() {
            let te = m.torque(y.slip, v[BUS_LOAD].norm());
            let mut ds = (m.t_m - te) / (2.0 * m.hm);
            if (y.slip >= 1.0 && ds > 0.0) || (y.slip <= 0.0 && ds < 0.0) {
                ds = 0.0;
            }
            d.slip = ds;
        }
        d
    }

    /// One RK4 step of the fast subsystem with slow variables frozen.
    pub fn step_fast(&mut self, h: f64) -> Result<()> {
        debug_assert!(h > 0.0);
        let y0 = self.fast_vars();
        let v0 = self.state.voltages;
        let k1 = self.derivatives(&y0, &v0);
        let y2 = y0.axpy(0.5 * h, &k1);
        let s2 = self.solve_at(&y2, &v0)?;
        let k2 = self.derivatives(&y2, &s2.voltages);
        let y3 = y0.axpy(0.5 * h, &k2);
        let s3 = self.solve_at(&y3, &s2.voltages)?;
        let k3 = self.derivatives(&y3, &s3.voltages);
        let y4 = y0.axpy(h, &k3);
        let s4 = self.solve_at(&y4, &s3.voltages)?;
        let k4 = self.derivatives(&y4, &s4.voltages);
        let incr = FastVars {
            delta: k1.delta + 2.0 * k2.delta + 2.0 * k3.delta + k4.delta,
            domega: k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega,
            eq_prime: k1.eq_prime + 2.0 * k2.eq_prime + 2.0 * k3.eq_prime + k4.eq_prime,
            efd: k1.efd + 2.0 * k2.efd + 2.0 * k3.efd + k4.efd,
            slip: k1.slip + 2.0 * k2.slip + 2.0 * k3.slip + k4.slip,
        };
        let y1 = y0.axpy(h / 6.0, &incr);
        self.set_fast_vars(&y1);
        let y1 = self.fast_vars();
        let sol = self.solve_at(&y1, &s4.voltages)?;
        self.state.voltages.copy_from_slice(&sol.voltages);
        self.last_solve = Some(sol);
        self.state.time += h;
        Ok(())
    }

    /// Explicit update of the OXL timer over one substep.
    fn update_oxl(&mut self, h: f64) {
        let i_f = self.field_current();
        let time = self.state.time;
        let ex = &mut self.state.exciter;
        if !ex.oxl_enabled {
            return;
        }
        ex.x_oxl = (ex.x_oxl + ex.oxl_gain * (i_f - ex.if_lim) * h).max(0.0);
        if !ex.oxl_active && ex.x_oxl >= ex.oxl_threshold {
            ex.oxl_active = true;
            self.state.events.push(SimEvent {
                time,
                kind: EventKind::OxlActivated,
            });
        } else if ex.oxl_active && ex.x_oxl <= 0.0 {
            ex.oxl_active = false;
            self.state.events.push(SimEvent {
                time,
                kind: EventKind::OxlReleased,
            });
        }
    }

    /// Deadband/delay logic of the LTC over one substep. Returns true if the
    /// tap moved.
    fn update_ltc(&mut self, h: f64) -> bool {
        let v3 = self.bus_voltage(BUS_LOAD);
        let tap = self.state.network.tap();
        let time = self.state.time;
        let ltc = &mut self.state.ltc;
        let err = v3 - ltc.v3_ref;
        if err.abs() <= ltc.deadband {
            ltc.timer = 0.0;
            ltc.first_move = true;
            return false;
        }
        // Lower tap raises the secondary voltage.
        let target = if err < 0.0 {
            (tap - ltc.step).max(ltc.r_min)
        } else {
            (tap + ltc.step).min(ltc.r_max)
        };
        if (target - tap).abs() < 1e-12 {
            ltc.timer = 0.0;
            return false;
        }
        ltc.timer += h;
        if ltc.timer + 1e-9 < ltc.delay() {
            return false;
        }
        ltc.timer = 0.0;
        ltc.first_move = false;
        self.state.network.set_tap(target);
        self.state.events.push(SimEvent {
            time,
            kind: EventKind::TapStep {
                from: tap,
                to: target,
            },
        });
        true
    }

    /// Trips the given circuit and re-solves the network.
    pub fn apply_disturbance(&mut self, branch: &str) -> Result<()> {
        self.state.network.trip(branch)?;
        self.delta_ref = self.state.generator.delta;
        self.state.events.push(SimEvent {
            time: self.state.time,
            kind: EventKind::LineTrip(branch.to_string()),
        });
        self.solve_network()?;
        Ok(())
    }

    pub fn set_v3_ref(&mut self, v3_ref: f64) {
        let old = self.state.ltc.v3_ref;
        if (old - v3_ref).abs() > 0.0 {
            self.state.ltc.v3_ref = v3_ref;
            self.state.events.push(SimEvent {
                time: self.state.time,
                kind: EventKind::ReferenceChange {
                    from: old,
                    to: v3_ref,
                },
            });
        }
    }

    /// Changes the operating demand (total MW and motor ratio) in place.
    pub fn set_demand(&mut self, p_total_mw: f64, r_motor: f64) -> Result<()> {
        self.state.load.p_total_mw = p_total_mw.max(0.0);
        self.state.load.r_motor = r_motor.clamp(0.0, 1.0);
        self.state.motor.t_m = self.state.load.motor_torque(self.state.motor.s_rated_mva);
        self.solve_network()?;
        Ok(())
    }

    pub fn window(&self, solve_failed: bool) -> TrajectoryWindow {
        TrajectoryWindow {
            delta_ref: self.delta_ref,
            solve_failed,
            s_stall: self.params.detection.s_stall,
            pole_slip_rad: self.params.detection.pole_slip_rad,
        }
    }

    fn maybe_disturb(&mut self) -> Result<()> {
        if let Some(d) = &self.pending_disturbance {
            if self.state.time + 1e-9 >= d.time {
                let branch = d.branch.clone();
                self.pending_disturbance = None;
                self.apply_disturbance(&branch)?;
            }
        }
        Ok(())
    }

    /// One substep: fast RK4 step, then OXL and LTC updates.
    pub fn substep(&mut self) -> Result<()> {
        let h = self.h_int();
        self.maybe_disturb()?;
        self.step_fast(h)?;
        self.update_oxl(h);
        if self.update_ltc(h) {
            self.solve_network()?;
        }
        Ok(())
    }

    /// Advances by `window` seconds (a whole number of substeps). Stops at
    /// the first detected instability and returns it. Solve failures are
    /// returned as errors stamped with the failure time.
    pub fn step_slow(&mut self, window: f64) -> Result<Option<InstabilityEvent>> {
        let n = substeps(window, self.h_int())?;
        for _ in 0..n {
            if let Err(e) = self.substep() {
                return Err(Error::SimulationFailure {
                    time: self.state.time,
                    source: Box::new(e),
                });
            }
            if let Some(ev) = detect_instability(&self.state, &self.window(false)) {
                return Ok(Some(ev));
            }
        }
        Ok(None)
    }

    /// Like [`Simulator::step_slow`] but attributes solve failures to a
    /// mechanism, records the first event and never fails.
    pub fn advance(&mut self, window: f64) -> Option<InstabilityEvent> {
        if let Some(ev) = &self.instability {
            return Some(ev.clone());
        }
        match self.step_slow(window) {
            Ok(Some(ev)) => self.record_instability(ev),
            Ok(None) => None,
            Err(_) => self.advance_failed(),
        }
    }

    /// Attributes a failed solve at the current state to a mechanism.
    pub fn advance_failed(&mut self) -> Option<InstabilityEvent> {
        if let Some(ev) = &self.instability {
            return Some(ev.clone());
        }
        let ev = detect_instability(&self.state, &self.window(true))?;
        self.record_instability(ev)
    }

    fn record_instability(&mut self, ev: InstabilityEvent) -> Option<InstabilityEvent> {
        self.state.events.push(SimEvent {
            time: ev.time,
            kind: EventKind::Instability(ev.clone()),
        });
        self.instability = Some(ev.clone());
        Some(ev)
    }

    pub fn observation(&self) -> PlantReadings {
        PlantReadings {
            v: [
                self.bus_voltage(BUS_REMOTE),
                self.bus_voltage(BUS_GEN),
                self.bus_voltage(BUS_LOAD),
                self.bus_voltage(BUS_HUB),
            ],
            eq_prime: self.state.generator.eq_prime,
            x_oxl: self.state.exciter.x_oxl,
        }
    }
}

/// Instantaneous measured quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantReadings {
    pub v: [f64; 4],
    pub eq_prime: f64,
    pub x_oxl: f64,
}

pub fn substeps(window: f64, h: f64) -> Result<usize> {
    let n = (window / h).round();
    if n < 1.0 || ((n * h) - window).abs() > 1e-9 * window.max(1.0) {
        return Err(Error::Config(format!(
            "window {window} s is not a positive multiple of the integration step {h} s"
        )));
    }
    Ok(n as usize)
}

pub fn network_equations(state: &SimState, y: &FastVars, s_base_mva: f64) -> NetworkEquations {
    let net: &NetworkModel = &state.network;
    let mut injections = vec![Complex64::new(0.0, 0.0); N_BUS];
    injections[BUS_REMOTE] = Complex64::new(net.source_emf, 0.0) / Complex64::new(0.0, net.source_x);
    let g = &state.generator;
    let generator = g.online.then_some(GeneratorPort {
        bus: BUS_GEN,
        delta: y.delta,
        eq_prime: y.eq_prime,
        xd_prime: g.xd_prime,
        xq: g.xq,
    });
    let motor = state
        .motor
        .active()
        .then(|| (BUS_LOAD, state.motor.admittance(y.slip, s_base_mva)));
    let exp = state.load.exp_load(s_base_mva);
    NetworkEquations {
        n: N_BUS,
        y: net.admittance(),
        injections,
        generator,
        motor,
        load: (exp.p0 != 0.0 || exp.q0 != 0.0).then_some(exp),
    }
}
