//! Small dense linear algebra used by the Newton solvers.

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `pivot_tol` relative to the
/// largest entry of `a`.
pub fn solve_in_place(a: &mut DenseMatrix, b: &mut [f64], pivot_tol: f64) -> Option<()> {
    let n = a.n;
    let scale = a.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for k in 0..n {
        let mut p = k;
        let mut best = a.get(k, k).abs();
        for i in (k + 1)..n {
            let v = a.get(i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= pivot_tol * scale {
            return None;
        }
        if p != k {
            for j in 0..n {
                a.data.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a.get(k, k);
        for i in (k + 1)..n {
            let f = a.get(i, k) / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                let v = a.get(k, j);
                a.add(i, j, -f * v);
            }
            b[i] -= f * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in (k + 1)..n {
            s -= a.get(k, j) * b[j];
        }
        b[k] = s / a.get(k, k);
    }
    Some(())
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Outcome of a generic Newton iteration.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub singular: bool,
}

/// Newton's method with a forward-difference Jacobian. Intended for small
/// systems off the hot path (initialisation, equilibrium searches).
pub fn newton_fd<F>(mut f: F, x0: &[f64], tol: f64, max_iter: usize) -> NewtonOutcome
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut res = inf_norm(&fx);
    for it in 0..max_iter {
        if !res.is_finite() {
            break;
        }
        if res < tol {
            return NewtonOutcome {
                x,
                residual: res,
                iterations: it,
                converged: true,
                singular: false,
            };
        }
        let mut jac = DenseMatrix::zeros(n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let fp = f(&xp);
            for i in 0..n {
                jac.set(i, j, (fp[i] - fx[i]) / h);
            }
        }
        let mut dx: Vec<f64> = fx.iter().map(|v| -v).collect();
        if solve_in_place(&mut jac, &mut dx, 1e-14).is_none() {
            return NewtonOutcome {
                x,
                residual: res,
                iterations: it,
                converged: false,
                singular: true,
            };
        }
        // Backtrack on the residual norm.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial);
            let rt = inf_norm(&ft);
            if rt.is_finite() && (rt < res || rt < tol) {
                x = trial;
                fx = ft;
                res = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome {
        converged: res < tol,
        x,
        residual: res,
        iterations: max_iter,
        singular: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut a = DenseMatrix {
            n: 3,
            data: vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0],
        };
        let mut b = vec![8.0, -11.0, -3.0];
        solve_in_place(&mut a, &mut b, 1e-14).unwrap();
        for (got, want) in b.iter().zip([2.0, 3.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular() {
        let mut a = DenseMatrix {
            n: 2,
            data: vec![1.0, 2.0, 2.0, 4.0],
        };
        let mut b = vec![1.0, 1.0];
        assert!(solve_in_place(&mut a, &mut b, 1e-14).is_none());
    }

    #[test]
    fn newton_finds_root() {
        let out = newton_fd(
            |x| vec![x[0] * x[0] - 2.0, x[1] - x[0]],
            &[1.0, 0.0],
            1e-12,
            50,
        );
        assert!(out.converged);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-10);
    }
}
