//! Network model of the four-bus system and its Newton-Raphson solution.
//!
//! The network equations are written as nodal current balances in
//! rectangular coordinates. Every element except the exponential load is
//! (real-)linear in the bus voltages, so the Jacobian is the constant
//! admittance block plus a 2x2 load block.

use num_complex::Complex64;

use super::params::SystemParams;
use crate::error::{Error, Result};
use crate::linalg::{solve_in_place, DenseMatrix};

pub const N_BUS: usize = 4;
/// Bus indices (zero-based) of the test system.
pub const BUS_REMOTE: usize = 0;
pub const BUS_GEN: usize = 1;
pub const BUS_LOAD: usize = 2;
pub const BUS_HUB: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total shunt susceptance, split evenly between both ends.
    pub b: f64,
    /// Off-nominal ratio on the `from` side; 1.0 for lines.
    pub tap: f64,
    pub in_service: bool,
}

impl Branch {
    fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

/// Four-bus topology: remote source (1), generator (2), load (3), hub (4).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub branches: Vec<Branch>,
    pub bus_shunt_b: [f64; N_BUS],
    pub source_emf: f64,
    pub source_x: f64,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
}

pub const TIE_A: &str = "tie_1_4_a";
pub const TIE_B: &str = "tie_1_4_b";
pub const STEP_UP: &str = "step_up_2_4";
pub const LTC: &str = "ltc_4_3";

impl NetworkModel {
    pub fn from_params(p: &SystemParams, tap: f64) -> Self {
        let n = &p.network;
        let line = |name: &str, from, to, r, x, b| Branch {
            name: name.to_string(),
            from,
            to,
            r,
            x,
            b,
            tap: 1.0,
            in_service: true,
        };
        let mut ltc = line(LTC, BUS_HUB, BUS_LOAD, 0.0, n.x_ltc, 0.0);
        ltc.tap = tap;
        Self {
            branches: vec![
                line(TIE_A, BUS_REMOTE, BUS_HUB, n.r_tie, n.x_tie, n.b_tie),
                line(TIE_B, BUS_REMOTE, BUS_HUB, n.r_tie, n.x_tie, n.b_tie),
                line(STEP_UP, BUS_GEN, BUS_HUB, 0.0, n.x_step_up, 0.0),
                ltc,
            ],
            bus_shunt_b: n.bus_shunt_b,
            source_emf: p.source.emf,
            source_x: p.source.x_th,
            s_base_mva: p.base.s_base_mva,
            v_base_kv: p.base.v_base_kv,
        }
    }

    pub fn branch(&self, name: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.name == name)
    }

    pub fn tap(&self) -> f64 {
        self.branch(LTC).map(|b| b.tap).unwrap_or(1.0)
    }

    pub fn set_tap(&mut self, tap: f64) {
        if let Some(b) = self.branches.iter_mut().find(|b| b.name == LTC) {
            b.tap = tap;
        }
    }

    /// Takes a branch out of service. Fails if it is unknown or already out.
    pub fn trip(&mut self, name: &str) -> Result<()> {
        match self.branches.iter_mut().find(|b| b.name == name) {
            Some(b) if b.in_service => {
                b.in_service = false;
                Ok(())
            }
            _ => Err(Error::UnknownBranch(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.branches {
            if !(b.x > 0.0) {
                return Err(Error::Config(format!("branch {} reactance must be positive", b.name)));
            }
        }
        if !self.is_connected() {
            return Err(Error::Config("network is disconnected".into()));
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = [false; N_BUS];
        seen[BUS_REMOTE] = true;
        loop {
            let mut changed = false;
            for b in self.branches.iter().filter(|b| b.in_service) {
                if seen[b.from] != seen[b.to] {
                    seen[b.from] = true;
                    seen[b.to] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Bus admittance matrix including branch charging, bus shunts and the
    /// source reactance at bus 1.
    pub fn admittance(&self) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); N_BUS * N_BUS];
        for b in self.branches.iter().filter(|b| b.in_service) {
            let ys = b.series_admittance();
            let ysh = Complex64::new(0.0, b.b / 2.0);
            let t = b.tap;
            let (f, k) = (b.from, b.to);
            y[f * N_BUS + f] += (ys + ysh) / (t * t);
            y[k * N_BUS + k] += ys + ysh;
            y[f * N_BUS + k] -= ys / t;
            y[k * N_BUS + f] -= ys / t;
        }
        for (i, bsh) in self.bus_shunt_b.iter().enumerate() {
            y[i * N_BUS + i] += Complex64::new(0.0, *bsh);
        }
        y[BUS_REMOTE * N_BUS + BUS_REMOTE] += Complex64::new(0.0, -1.0 / self.source_x);
        y
    }

    /// Effective series reactance between buses 1 and 4 over the in-service
    /// tie circuits.
    pub fn tie_reactance(&self) -> f64 {
        let g: f64 = self
            .branches
            .iter()
            .filter(|b| b.in_service && b.name.starts_with("tie_1_4"))
            .map(|b| 1.0 / b.x)
            .sum();
        if g > 0.0 {
            1.0 / g
        } else {
            f64::INFINITY
        }
    }
}

/// Synchronous machine seen from the network: one-axis model with transient
/// EMF `eq_prime` behind `xd_prime` on the d-axis and `xq` on the q-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorPort {
    pub bus: usize,
    pub delta: f64,
    pub eq_prime: f64,
    pub xd_prime: f64,
    pub xq: f64,
}

/// Stator quantities of the machine in its own d-q frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatorDq {
    pub vd: f64,
    pub vq: f64,
    pub id: f64,
    pub iq: f64,
}

impl StatorDq {
    pub fn electrical_power(&self) -> f64 {
        self.vd * self.id + self.vq * self.iq
    }
    pub fn reactive_power(&self) -> f64 {
        self.vq * self.id - self.vd * self.iq
    }
}

impl GeneratorPort {
    fn rotation(&self) -> (f64, f64) {
        let theta = self.delta - std::f64::consts::FRAC_PI_2;
        (theta.cos(), theta.sin())
    }

    pub fn stator(&self, v: Complex64) -> StatorDq {
        let (c, s) = self.rotation();
        let vd = v.re * c + v.im * s;
        let vq = -v.re * s + v.im * c;
        StatorDq {
            vd,
            vq,
            id: (self.eq_prime - vq) / self.xd_prime,
            iq: vd / self.xq,
        }
    }

    /// Current injected into the network.
    pub fn current(&self, v: Complex64) -> Complex64 {
        let (c, s) = self.rotation();
        let dq = self.stator(v);
        Complex64::new(dq.id * c - dq.iq * s, dq.id * s + dq.iq * c)
    }

    /// d(Re I, Im I)/d(Re V, Im V), row-major.
    fn current_jacobian(&self) -> [f64; 4] {
        let (c, s) = self.rotation();
        let (a, q) = (1.0 / self.xd_prime, 1.0 / self.xq);
        [
            c * s * (a - q),
            -(c * c * a + s * s * q),
            s * s * a + c * c * q,
            s * c * (q - a),
        ]
    }
}

/// Exponential static load `P = P0 (V/V0)^alpha`, `Q = Q0 (V/V0)^beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpLoad {
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v0: f64,
}

impl ExpLoad {
    pub fn power(&self, vm: f64) -> (f64, f64) {
        let r = vm / self.v0;
        (self.p0 * r.powf(self.alpha), self.q0 * r.powf(self.beta))
    }

    /// Current drawn by the load and its 2x2 Jacobian w.r.t. (Re V, Im V).
    fn current_and_jacobian(&self, v: Complex64) -> (Complex64, [f64; 4]) {
        let (e, f) = (v.re, v.im);
        let m2 = e * e + f * f;
        let m = m2.sqrt();
        let p = self.p0 / self.v0.powf(self.alpha);
        let q = self.q0 / self.v0.powf(self.beta);
        let (a, b) = (self.alpha, self.beta);
        let pa = p * m.powf(a - 2.0);
        let qb = q * m.powf(b - 2.0);
        let pa4 = p * (a - 2.0) * m.powf(a - 4.0);
        let qb4 = q * (b - 2.0) * m.powf(b - 4.0);
        let cur = Complex64::new(pa * e + qb * f, pa * f - qb * e);
        let jac = [
            pa4 * e * e + pa + qb4 * e * f,
            pa4 * e * f + qb4 * f * f + qb,
            pa4 * e * f - qb4 * e * e - qb,
            pa4 * f * f + pa - qb4 * e * f,
        ];
        (cur, jac)
    }
}

/// Algebraic network equations for one solve.
#[derive(Debug, Clone)]
pub struct NetworkEquations {
    pub n: usize,
    /// Linear bus admittance (row-major, n x n), without motor admittance.
    pub y: Vec<Complex64>,
    /// Constant current injections (e.g. the remote source Norton current).
    pub injections: Vec<Complex64>,
    pub generator: Option<GeneratorPort>,
    /// Shunt admittance of the induction motor at the given bus.
    pub motor: Option<(usize, Complex64)>,
    pub load: Option<ExpLoad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub voltages: Vec<Complex64>,
    /// Infinity norm of the complex power mismatch (pu).
    pub residual: f64,
    pub iterations: usize,
}

impl NetworkEquations {
    /// Nodal current mismatch `Y V - I_inj(V)` for each bus.
    pub fn current_mismatch(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut f: Vec<Complex64> = (0..n)
            .map(|i| {
                let mut s = -self.injections[i];
                for j in 0..n {
                    s += self.y[i * n + j] * v[j];
                }
                s
            })
            .collect();
        if let Some(g) = &self.generator {
            f[g.bus] -= g.current(v[g.bus]);
        }
        if let Some((bus, ym)) = self.motor {
            f[bus] += ym * v[bus];
        }
        if let Some(l) = &self.load {
            f[l.bus] += l.current_and_jacobian(v[l.bus]).0;
        }
        f
    }

    /// Infinity norm of the per-bus complex power mismatch `V_i conj(F_i)`.
    pub fn power_mismatch(&self, v: &[Complex64]) -> f64 {
        self.current_mismatch(v)
            .iter()
            .zip(v)
            .fold(0.0_f64, |m, (fi, vi)| m.max(vi.norm() * fi.norm()))
    }

    fn jacobian(&self, v: &[Complex64]) -> DenseMatrix {
        let n = self.n;
        let mut jac = DenseMatrix::zeros(2 * n);
        for i in 0..n {
            for j in 0..n {
                let y = self.y[i * n + j];
                jac.set(2 * i, 2 * j, y.re);
                jac.set(2 * i, 2 * j + 1, -y.im);
                jac.set(2 * i + 1, 2 * j, y.im);
                jac.set(2 * i + 1, 2 * j + 1, y.re);
            }
        }
        let mut add_block = |bus: usize, blk: [f64; 4], sign: f64| {
            jac.add(2 * bus, 2 * bus, sign * blk[0]);
            jac.add(2 * bus, 2 * bus + 1, sign * blk[1]);
            jac.add(2 * bus + 1, 2 * bus, sign * blk[2]);
            jac.add(2 * bus + 1, 2 * bus + 1, sign * blk[3]);
        };
        if let Some(g) = &self.generator {
            add_block(g.bus, g.current_jacobian(), -1.0);
        }
        if let Some((bus, ym)) = self.motor {
            add_block(bus, [ym.re, -ym.im, ym.im, ym.re], 1.0);
        }
        if let Some(l) = &self.load {
            add_block(l.bus, l.current_and_jacobian(v[l.bus]).1, 1.0);
        }
        jac
    }

    /// Newton-Raphson from `warm`; converged when the power mismatch is
    /// below `tol`.
    pub fn solve(&self, warm: &[Complex64], tol: f64, max_iter: usize) -> Result<NetworkSolution> {
        let n = self.n;
        let mut v = warm.to_vec();
        let mut f = self.current_mismatch(&v);
        let mut res = self.power_mismatch_from(&v, &f);
        for it in 0..=max_iter {
            if !res.is_finite() {
                break;
            }
            if res < tol {
                return Ok(NetworkSolution {
                    voltages: v,
                    residual: res,
                    iterations: it,
                });
            }
            if it == max_iter {
                break;
            }
            let mut jac = self.jacobian(&v);
            let mut rhs: Vec<f64> = f.iter().flat_map(|c| [-c.re, -c.im]).collect();
            solve_in_place(&mut jac, &mut rhs, 1e-13).ok_or(Error::SingularJacobian)?;
            for i in 0..n {
                v[i] += Complex64::new(rhs[2 * i], rhs[2 * i + 1]);
            }
            if v.iter().any(|x| !(x.norm() > 1e-3)) {
                break;
            }
            f = self.current_mismatch(&v);
            res = self.power_mismatch_from(&v, &f);
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: res,
        })
    }

    fn power_mismatch_from(&self, v: &[Complex64], f: &[Complex64]) -> f64 {
        f.iter()
            .zip(v)
            .fold(0.0_f64, |m, (fi, vi)| m.max(vi.norm() * fi.norm()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn generator_jacobian_matches_finite_difference() {
        let g = GeneratorPort {
            bus: 0,
            delta: 0.7,
            eq_prime: 1.1,
            xd_prime: 0.05,
            xq: 0.3,
        };
        let v = c(0.95, 0.2);
        let jac = g.current_jacobian();
        let h = 1e-7;
        let dre = (g.current(v + c(h, 0.0)) - g.current(v - c(h, 0.0))) / (2.0 * h);
        let dim = (g.current(v + c(0.0, h)) - g.current(v - c(0.0, h))) / (2.0 * h);
        let fd = [dre.re, dim.re, dre.im, dim.im];
        for k in 0..4 {
            assert!((jac[k] - fd[k]).abs() < 1e-6, "{k}: {} vs {}", jac[k], fd[k]);
        }
    }

    #[test]
    fn load_jacobian_matches_finite_difference() {
        let l = ExpLoad {
            bus: 0,
            p0: 12.0,
            q0: 3.0,
            alpha: 1.5,
            beta: 2.5,
            v0: 1.0,
        };
        let v = c(0.93, -0.31);
        let (_, jac) = l.current_and_jacobian(v);
        let h = 1e-7;
        let cur = |x: Complex64| l.current_and_jacobian(x).0;
        let dre = (cur(v + c(h, 0.0)) - cur(v - c(h, 0.0))) / (2.0 * h);
        let dim = (cur(v + c(0.0, h)) - cur(v - c(0.0, h))) / (2.0 * h);
        let fd = [dre.re, dim.re, dre.im, dim.im];
        for k in 0..4 {
            assert!((jac[k] - fd[k]).abs() < 1e-5, "{k}: {} vs {}", jac[k], fd[k]);
        }
        // S = V conj(I) reproduces the exponential characteristic.
        let (cur0, _) = l.current_and_jacobian(v);
        let s = v * cur0.conj();
        let (p, q) = l.power(v.norm());
        assert!((s.re - p).abs() < 1e-12 && (s.im - q).abs() < 1e-12);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // Source 1.0 pu behind X = 0.1 feeding P = 0.5, Q = 0 (constant power).
        let x = 0.1;
        let eqs = NetworkEquations {
            n: 1,
            y: vec![c(0.0, -1.0 / x)],
            injections: vec![c(1.0, 0.0) / c(0.0, x)],
            generator: None,
            motor: None,
            load: Some(ExpLoad {
                bus: 0,
                p0: 0.5,
                q0: 0.0,
                alpha: 0.0,
                beta: 0.0,
                v0: 1.0,
            }),
        };
        let sol = eqs.solve(&[c(1.0, 0.0)], 1e-12, 50).unwrap();
        // V^4 - E^2 V^2 + X^2 P^2 = 0, upper root.
        let (e, p) = (1.0_f64, 0.5_f64);
        let v2 = (e * e + (e.powi(4) - 4.0 * x * x * p * p).sqrt()) / 2.0;
        assert!((sol.voltages[0].norm() - v2.sqrt()).abs() < 1e-8);
        assert!(sol.residual < 1e-8);
    }

    #[test]
    fn tripping_one_tie_doubles_transfer_reactance() {
        let p = SystemParams::default();
        let mut net = NetworkModel::from_params(&p, 1.0);
        let before = net.tie_reactance();
        net.trip(TIE_A).unwrap();
        assert!((net.tie_reactance() - 2.0 * before).abs() < 1e-12);
        assert!(net.is_connected());
        assert_eq!(net.trip(TIE_A), Err(Error::UnknownBranch(TIE_A.into())));
        assert!(matches!(net.trip("nope"), Err(Error::UnknownBranch(_))));
    }
}
