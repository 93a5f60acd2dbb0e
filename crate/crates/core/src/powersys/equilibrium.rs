//! Steady states of the test system.
//!
//! [`initialize`] computes the pre-disturbance operating point (a load flow
//! with the generator terminal voltage and the LTC secondary voltage held
//! at their set points). [`solve_short_term_equilibrium`] finds the fast
//! subsystem equilibrium for frozen slow variables.

use num_complex::Complex64;

use super::network::{BUS_GEN, BUS_LOAD, N_BUS};
use super::params::SystemParams;
use super::sim::{network_equations, FastVars, Simulator};
use super::state::*;
use crate::error::{Error, Result};
use crate::linalg::newton_fd;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub p_g_mw: f64,
    pub p_total_mw: f64,
    pub r_motor: f64,
}

const INIT_TOL: f64 = 1e-12;
/// Eigenvalues with real part above this count as unstable (finite
/// differences blur exact zeros).
const STABILITY_MARGIN: f64 = 1e-6;

fn unpack_voltages(x: &[f64]) -> [Complex64; 4] {
    let mut v = [Complex64::new(0.0, 0.0); N_BUS];
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = Complex64::new(x[2 * i], x[2 * i + 1]);
    }
    v
}

fn network_residual(state: &SimState, y: &FastVars, v: &[Complex64], s_base: f64, out: &mut Vec<f64>) {
    let f = network_equations(state, y, s_base).current_mismatch(v);
    out.extend(f.iter().flat_map(|c| [c.re, c.im]));
}

fn skeleton(params: &SystemParams, op: &OperatingPoint) -> SimState {
    let load = LoadModel::from_params(params, op.p_total_mw, op.r_motor);
    let mut motor = MotorState::from_params(params);
    motor.t_m = load.motor_torque(motor.s_rated_mva);
    SimState {
        time: 0.0,
        generator: GeneratorState::from_params(params, op.p_g_mw),
        exciter: AvrOxlState::from_params(params),
        motor,
        ltc: LtcState::from_params(params),
        load,
        network: super::network::NetworkModel::from_params(params, 1.0),
        voltages: [Complex64::new(1.0, 0.0); N_BUS],
        events: Vec::new(),
    }
}

/// Builds a simulator at the pre-disturbance steady state of `op`.
pub fn initialize(params: &SystemParams, op: &OperatingPoint) -> Result<Simulator> {
    params.validate()?;
    let s_base = params.base.s_base_mva;
    let mut base = skeleton(params, op);
    let v_set = params.generator.v_terminal_set;
    let v3_ref = base.ltc.v3_ref;
    let online = base.generator.online;
    let motor_active = base.motor.active();

    // Unknowns: bus voltages (8), delta, E'q, tap, slip.
    let residual = |x: &[f64], fixed_tap: Option<f64>| -> Vec<f64> {
        let mut st = base.clone();
        let tap = fixed_tap.unwrap_or(x[10]);
        st.network.set_tap(tap);
        let y = FastVars {
            delta: x[8],
            domega: 0.0,
            eq_prime: x[9],
            efd: 0.0,
            slip: x[11],
        };
        let v = unpack_voltages(x);
        let mut out = Vec::with_capacity(12);
        network_residual(&st, &y, &v, s_base, &mut out);
        if online {
            let port = super::network::GeneratorPort {
                bus: BUS_GEN,
                delta: y.delta,
                eq_prime: y.eq_prime,
                xd_prime: st.generator.xd_prime,
                xq: st.generator.xq,
            };
            out.push(port.stator(v[BUS_GEN]).electrical_power() - st.generator.p_m);
            out.push(v[BUS_GEN].norm() - v_set);
        } else {
            out.push(x[8]);
            out.push(x[9] - 1.0);
        }
        match fixed_tap {
            Some(t) => out.push(x[10] - t),
            None => out.push(v[BUS_LOAD].norm() - v3_ref),
        }
        if motor_active {
            out.push(st.motor.torque(y.slip, v[BUS_LOAD].norm()) - st.motor.t_m);
        } else {
            out.push(y.slip);
        }
        out
    };

    let mut x0 = vec![1.0, 0.0, 1.0, 0.1, 1.0, -0.1, 1.0, 0.0, 0.8, 1.2, 1.0, 0.0];
    if motor_active {
        x0[11] = (base.motor.t_m * base.motor.rr).min(0.5 * base.motor.peak_slip());
    }
    let mut out = newton_fd(|x| residual(x, None), &x0, INIT_TOL, 100);
    if out.converged {
        let tap = out.x[10];
        let bound = if tap < base.ltc.r_min {
            Some(base.ltc.r_min)
        } else if tap > base.ltc.r_max {
            Some(base.ltc.r_max)
        } else {
            None
        };
        if let Some(b) = bound {
            out = newton_fd(|x| residual(x, Some(b)), &out.x, INIT_TOL, 100);
        }
    }
    if !out.converged {
        return Err(Error::InfeasibleInitialCondition(format!(
            "load flow did not converge (residual {:.3e})",
            out.residual
        )));
    }
    let x = out.x;
    base.network.set_tap(x[10]);
    base.generator.delta = x[8];
    base.generator.eq_prime = x[9];
    base.motor.slip = x[11];
    base.voltages = unpack_voltages(&x);

    if motor_active && !(x[11] >= 0.0 && x[11] < base.motor.peak_slip()) {
        return Err(Error::InfeasibleInitialCondition(format!(
            "motor slip {:.4} not on the stable branch",
            x[11]
        )));
    }
    if online {
        if !(x[9] > 0.0) {
            return Err(Error::InfeasibleInitialCondition("non-positive E'q".into()));
        }
        let port = super::network::GeneratorPort {
            bus: BUS_GEN,
            delta: x[8],
            eq_prime: x[9],
            xd_prime: base.generator.xd_prime,
            xq: base.generator.xq,
        };
        let dq = port.stator(base.voltages[BUS_GEN]);
        let efd = base.generator.field_current(dq.id);
        if !(efd > 0.0 && efd <= base.exciter.efd_max) {
            return Err(Error::InfeasibleInitialCondition(format!(
                "field voltage {efd:.3} outside [0, {}]",
                base.exciter.efd_max
            )));
        }
        base.exciter.efd = efd;
        base.exciter.v_ref = base.voltages[BUS_GEN].norm() + efd / base.exciter.ka;
    }
    let mut sim = Simulator::new(base, params.clone());
    sim.solve_network()
        .map_err(|e| Error::InfeasibleInitialCondition(e.to_string()))?;
    if online && synchronizing_coefficient(&sim, &sim.fast_vars()).map_or(true, |k| k <= 0.0) {
        return Err(Error::InfeasibleInitialCondition(
            "operating point beyond the rotor-angle stability limit".into(),
        ));
    }
    Ok(sim)
}

/// dP_e/d(delta) at constant E'q, with the network re-solved.
fn synchronizing_coefficient(sim: &Simulator, y: &FastVars) -> Option<f64> {
    let s_base = sim.params.base.s_base_mva;
    let sp = &sim.params.solver;
    let pe = |yy: &FastVars| -> Option<f64> {
        let eqs = network_equations(&sim.state, yy, s_base);
        let sol = eqs.solve(&sim.state.voltages, sp.newton_tol, sp.max_iter).ok()?;
        Some(eqs.generator?.stator(sol.voltages[BUS_GEN]).electrical_power())
    };
    let h = 1e-5;
    let mut yp = *y;
    yp.delta += h;
    let mut ym = *y;
    ym.delta -= h;
    Some((pe(&yp)? - pe(&ym)?) / (2.0 * h))
}

/// Largest real part among the eigenvalues of the fast dynamics linearized
/// at `y` (network re-solved for every perturbation). Only the states that
/// are actually dynamic enter the Jacobian.
fn spectral_abscissa(sim: &Simulator, y: &FastVars) -> Option<f64> {
    let online = sim.state.generator.online;
    let motor = sim.state.motor.active();
    let idx: Vec<usize> = (0..5).filter(|&i| if i < 4 { online } else { motor }).collect();
    if idx.is_empty() {
        return Some(f64::NEG_INFINITY);
    }
    let get = |v: &FastVars, i: usize| [v.delta, v.domega, v.eq_prime, v.efd, v.slip][i];
    let f = |yy: &FastVars| -> Option<FastVars> {
        let sol = sim.solve_at(yy, &sim.state.voltages).ok()?;
        Some(sim.derivatives(yy, &sol.voltages))
    };
    let n = idx.len();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    let h = 1e-6;
    for (c, &j) in idx.iter().enumerate() {
        let mut yp = *y;
        let mut ym = *y;
        let bump = |v: &mut FastVars, d: f64| match j {
            0 => v.delta += d,
            1 => v.domega += d,
            2 => v.eq_prime += d,
            3 => v.efd += d,
            _ => v.slip += d,
        };
        bump(&mut yp, h);
        bump(&mut ym, -h);
        let (fp, fm) = (f(&yp)?, f(&ym)?);
        for (r, &i) in idx.iter().enumerate() {
            jac[(r, c)] = (get(&fp, i) - get(&fm, i)) / (2.0 * h);
        }
    }
    let eig = jac.complex_eigenvalues();
    Some(eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Slow variables that parameterise the fast equilibrium manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowVars {
    pub tap: f64,
    pub x_oxl: f64,
    pub oxl_active: bool,
    pub p_m: f64,
    pub load: LoadModel,
}

impl SlowVars {
    pub fn from_state(state: &SimState) -> Self {
        Self {
            tap: state.network.tap(),
            x_oxl: state.exciter.x_oxl,
            oxl_active: state.exciter.oxl_active,
            p_m: state.generator.p_m,
            load: state.load.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastEquilibrium {
    pub fast: FastVars,
    pub voltages: [Complex64; 4],
    pub residual: f64,
}

/// Solves the fast subsystem for its equilibrium with slow variables frozen
/// at `slow`, starting from the state of `template`. Returns `None` when no
/// equilibrium is found or the one found is unstable (past the peak-torque
/// slip, or with a linearized eigenvalue in the right half-plane).
pub fn solve_short_term_equilibrium(template: &Simulator, slow: &SlowVars) -> Option<FastEquilibrium> {
    let s_base = template.params.base.s_base_mva;
    let mut st = template.state.clone();
    st.network.set_tap(slow.tap);
    st.exciter.x_oxl = slow.x_oxl;
    st.exciter.oxl_active = slow.oxl_active;
    st.generator.p_m = slow.p_m;
    st.load = slow.load.clone();
    st.motor.t_m = st.load.motor_torque(st.motor.s_rated_mva);
    let online = st.generator.online;
    let motor_active = st.motor.active();

    // Unknowns: bus voltages (8), delta, E'q, AVR state, slip.
    let residual = |x: &[f64]| -> Vec<f64> {
        let y = FastVars {
            delta: x[8],
            domega: 0.0,
            eq_prime: x[9],
            efd: x[10],
            slip: x[11],
        };
        let v = unpack_voltages(x);
        let mut out = Vec::with_capacity(12);
        network_residual(&st, &y, &v, s_base, &mut out);
        if online {
            let g = &st.generator;
            let port = super::network::GeneratorPort {
                bus: BUS_GEN,
                delta: y.delta,
                eq_prime: y.eq_prime,
                xd_prime: g.xd_prime,
                xq: g.xq,
            };
            let dq = port.stator(v[BUS_GEN]);
            out.push(g.p_m - dq.electrical_power());
            out.push(st.exciter.applied_efd(y.efd) - g.field_current(dq.id));
            let ex = &st.exciter;
            out.push(y.efd - (ex.ka * (ex.v_ref - v[BUS_GEN].norm())).clamp(0.0, ex.efd_max));
        } else {
            out.extend([x[8], x[9] - 1.0, x[10]]);
        }
        if motor_active {
            out.push(st.motor.torque(y.slip, v[BUS_LOAD].norm()) - st.motor.t_m);
        } else {
            out.push(y.slip);
        }
        out
    };

    let y0 = template.fast_vars();
    let mut x0: Vec<f64> = template.state.voltages.iter().flat_map(|c| [c.re, c.im]).collect();
    x0.extend([y0.delta, y0.eq_prime, y0.efd, if motor_active { y0.slip } else { 0.0 }]);
    let out = newton_fd(residual, &x0, INIT_TOL, 100);
    if !out.converged {
        return None;
    }
    let x = out.x;
    let fast = FastVars {
        delta: x[8],
        domega: 0.0,
        eq_prime: x[9],
        efd: x[10],
        slip: x[11],
    };
    if online && !(fast.eq_prime > 0.0) {
        return None;
    }
    if motor_active && !(fast.slip >= 0.0 && fast.slip < st.motor.peak_slip()) {
        return None;
    }
    let voltages = unpack_voltages(&x);
    let mut probe = template.clone();
    probe.state = st.clone();
    probe.state.voltages = voltages;
    if spectral_abscissa(&probe, &fast).is_none_or(|a| a > STABILITY_MARGIN) {
        return None;
    }
    Some(FastEquilibrium {
        fast,
        voltages,
        residual: out.residual,
    })
}
