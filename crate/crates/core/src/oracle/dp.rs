//! Backward dynamic programming on the toy plant.
//!
//! `v(0, z) = 1_safe(z)` and, for `n >= 1` remaining decisions,
//! `v(n, z) = max_u E[ 1_safe(z') v(n - 1, z') ]`. The Gaussian expectation
//! is evaluated with Gauss-Legendre quadrature on the safe interval of the
//! standardized noise (the integrand is discontinuous at the boundary), and
//! `v(n - 1, .)` is interpolated linearly between grid nodes.

use gauss_quad::legendre::GaussLegendre;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::num::NonZeroUsize;

use super::toy::ToyConfig;
use crate::error::{Error, Result};

/// Standard deviations kept on each side of the noise distribution.
const TAIL: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub n_z: usize,
    /// Number of candidate actions, evenly spaced on [-1, 1].
    pub n_u: usize,
    pub quad_order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            z_min: 0.0,
            z_max: 8.0,
            n_z: 801,
            n_u: 41,
            quad_order: 64,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, toy: &ToyConfig) -> Result<()> {
        if self.n_z < 2 || self.n_u < 1 || self.z_max <= self.z_min {
            return Err(Error::GridCoverage("grid needs n_z >= 2, n_u >= 1 and z_max > z_min".into()));
        }
        if self.quad_order < 64 {
            return Err(Error::GridCoverage(format!(
                "quadrature order {} below the required 64 points",
                self.quad_order
            )));
        }
        if self.z_min > 0.0 {
            return Err(Error::GridCoverage("grid must reach the unsafe boundary z = 0".into()));
        }
        if let Some(u) = toy.upper {
            if self.z_max < u {
                return Err(Error::GridCoverage(format!("grid ends below the upper boundary {u}")));
            }
        }
        Ok(())
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n_z - 1) as f64
    }

    pub fn z(&self, j: usize) -> f64 {
        self.z_min + self.dz() * j as f64
    }

    pub fn action(&self, i: usize) -> f64 {
        if self.n_u == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (self.n_u - 1) as f64
        }
    }
}

/// Values indexed by (remaining decisions n, grid node j).
///
/// The safety value jumps at an unsafe boundary, so entries are stored as
/// the continuation "as if the node were safe" (the limit from the safe
/// side at boundary nodes); interpolation then stays accurate right up to
/// the boundary. [`DpTable::value_at`] applies the unsafe mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub grid: GridSpec,
    pub dt: f64,
    /// Total safety value.
    pub value: Array2<f64>,
    /// Per-mechanism values (only for fixed-policy evaluation; the optimal
    /// solve fills a single entry equal to `value`).
    pub mechanism_value: Vec<Array2<f64>>,
    /// Maximizing action (NaN where not applicable).
    pub action: Array2<f64>,
}

impl DpTable {
    pub fn n_max(&self) -> usize {
        self.value.nrows() - 1
    }

    fn interp(grid: &GridSpec, row: ndarray::ArrayView1<f64>, z: f64) -> f64 {
        if z <= grid.z_min {
            return row[0];
        }
        if z >= grid.z_max {
            return row[grid.n_z - 1];
        }
        let x = (z - grid.z_min) / grid.dz();
        let j = (x.floor() as usize).min(grid.n_z - 2);
        let t = x - j as f64;
        row[j] * (1.0 - t) + row[j + 1] * t
    }

    /// Safety value at remaining time `h` (uses floor(h / dt) decisions).
    pub fn value_at(&self, h: f64, z: f64, toy: &ToyConfig) -> f64 {
        if toy.unsafe_at(z).is_some() {
            return 0.0;
        }
        let n = crate::reach::env::steps_remaining(h, self.dt).min(self.n_max());
        Self::interp(&self.grid, self.value.row(n), z)
    }

    pub fn mechanism_value_at(&self, m: usize, h: f64, z: f64, toy: &ToyConfig) -> f64 {
        match toy.unsafe_at(z) {
            Some(fired) => (fired != m) as u8 as f64,
            None => {
                let n = crate::reach::env::steps_remaining(h, self.dt).min(self.n_max());
                Self::interp(&self.grid, self.mechanism_value[m].row(n), z)
            }
        }
    }

    /// Action value of applying `u` at `(h, z)` and acting optimally after.
    pub fn q_value(&self, toy: &ToyConfig, quad: &Quadrature, h: f64, z: f64, u: f64) -> f64 {
        if toy.unsafe_at(z).is_some() {
            return 0.0;
        }
        let n = crate::reach::env::steps_remaining(h, self.dt).min(self.n_max());
        if n == 0 {
            return 1.0;
        }
        let row = self.value.row(n - 1);
        quad.expect(toy, z, u, |zn| match toy.unsafe_at(zn) {
            Some(_) => 0.0,
            None => Self::interp(&self.grid, row, zn),
        })
    }

    /// CSV dump: one row per (n, z) node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.mechanism_value.len();
        write!(w, "n,h,z,value,action")?;
        for k in 0..m {
            write!(w, ",value_m{}", k + 1)?;
        }
        writeln!(w)?;
        for n in 0..=self.n_max() {
            for j in 0..self.grid.n_z {
                write!(
                    w,
                    "{},{},{},{},{}",
                    n,
                    n as f64 * self.dt,
                    self.grid.z(j),
                    self.value[[n, j]],
                    self.action[[n, j]]
                )?;
                for k in 0..m {
                    write!(w, ",{}", self.mechanism_value[k][[n, j]])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Gauss-Legendre rule for expectations over the toy's Gaussian step.
pub struct Quadrature {
    rule: GaussLegendre,
}

impl Quadrature {
    pub fn new(order: usize) -> Self {
        Self {
            rule: GaussLegendre::new(NonZeroUsize::new(order.max(1)).unwrap()),
        }
    }

    fn pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// `E[f(z')]` for `z' = z + (b u - c) dt + sigma sqrt(dt) xi`. The noise
    /// range is split at the unsafe boundaries so each piece is smooth.
    pub fn expect(&self, toy: &ToyConfig, z: f64, u: f64, f: impl Fn(f64) -> f64) -> f64 {
        let mu = toy.drift(z, u);
        let s = toy.sigma * toy.dt.sqrt();
        if s == 0.0 {
            return f(mu);
        }
        let mut cuts = vec![-TAIL, TAIL];
        let mut add = |zb: f64| {
            let x = (zb - mu) / s;
            if x > -TAIL && x < TAIL {
                cuts.push(x);
            }
        };
        add(0.0);
        if let Some(up) = toy.upper {
            add(up);
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.windows(2)
            .map(|w| {
                // Evaluate the piece's side of the discontinuity from its midpoint.
                self.rule.integrate(w[0], w[1], |x| Self::pdf(x) * f(mu + s * x))
            })
            .sum()
    }
}

/// Optimal safety value by backward recursion.
pub fn dp_solve_toy(toy: &ToyConfig, grid: &GridSpec) -> Result<DpTable> {
    solve(toy, grid, None)
}

/// Value of the fixed feedback policy `u = policy(n, z)`, with
/// per-mechanism first-hit values.
pub fn dp_evaluate_policy(toy: &ToyConfig, grid: &GridSpec, policy: &dyn Fn(usize, f64) -> f64) -> Result<DpTable> {
    solve(toy, grid, Some(policy))
}

fn solve(toy: &ToyConfig, grid: &GridSpec, policy: Option<&dyn Fn(usize, f64) -> f64>) -> Result<DpTable> {
    toy.validate()?;
    grid.validate(toy)?;
    let quad = Quadrature::new(grid.quad_order);
    let n_max = crate::reach::env::steps_remaining(toy.tau_max, toy.dt);
    let nz = grid.n_z;
    let m_count = if policy.is_some() { toy.mechanisms() } else { 1 };
    let mut value = Array2::<f64>::zeros((n_max + 1, nz));
    let mut action = Array2::<f64>::from_elem((n_max + 1, nz), f64::NAN);
    let mut mech: Vec<Array2<f64>> = (0..m_count).map(|_| Array2::zeros((n_max + 1, nz))).collect();
    for j in 0..nz {
        value[[0, j]] = 1.0;
        for t in mech.iter_mut() {
            t[[0, j]] = 1.0;
        }
    }
    for n in 1..=n_max {
        let prev = value.row(n - 1).to_owned();
        let prev_m: Vec<_> = mech.iter().map(|t| t.row(n - 1).to_owned()).collect();
        for j in 0..nz {
            let z = grid.z(j);
            let total = |u: f64| {
                quad.expect(toy, z, u, |zn| match toy.unsafe_at(zn) {
                    Some(_) => 0.0,
                    None => DpTable::interp(grid, prev.view(), zn),
                })
            };
            let u = match policy {
                Some(p) => p(n, z).clamp(-1.0, 1.0),
                None => {
                    let mut best = (f64::NEG_INFINITY, 0.0);
                    for i in 0..grid.n_u {
                        let u = grid.action(i);
                        let q = total(u);
                        // Ties keep the larger action.
                        if q >= best.0 - 1e-15 {
                            best = (q, u);
                        }
                    }
                    best.1
                }
            };
            value[[n, j]] = total(u);
            action[[n, j]] = u;
            if policy.is_some() {
                for (m, t) in mech.iter_mut().enumerate() {
                    let pm = &prev_m[m];
                    t[[n, j]] = quad.expect(toy, z, u, |zn| match toy.unsafe_at(zn) {
                        Some(fired) => (fired != m) as u8 as f64,
                        None => DpTable::interp(grid, pm.view(), zn),
                    });
                }
            }
        }
    }
    if policy.is_none() {
        mech = vec![value.clone()];
    }
    Ok(DpTable {
        grid: grid.clone(),
        dt: toy.dt,
        value,
        mechanism_value: mech,
        action,
    })
}
