//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min 0.5 x'Gx + a'x  s.t.  C x >= b`. The Hessian factorization is
//! done once so repeated solves with different `a`, `b` (the MPC case, where
//! only the measured state moves the right-hand side) are cheap. Constraint
//! selection always takes the most violated row with the lowest index on
//! ties, so results are bit-reproducible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite QP data")]
    NonFinite,
    #[error("active-set iteration limit {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    /// Active constraint indices with their multipliers.
    pub active: Vec<(usize, f64)>,
    pub value: f64,
    pub iterations: usize,
}

/// Pre-factored QP with fixed Hessian and constraint matrix.
#[derive(Debug, Clone)]
pub struct DenseQp {
    g: DMatrix<f64>,
    j0: DMatrix<f64>,
    ginv: DMatrix<f64>,
    c: DMatrix<f64>,
    row_scale: DVector<f64>,
    max_iter: usize,
}

const FEAS_TOL: f64 = 1e-10;

impl DenseQp {
    pub fn new(g: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, QpError> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(QpError::Dimension {
                expected: n,
                got: g.ncols(),
            });
        }
        if c.ncols() != n {
            return Err(QpError::Dimension {
                expected: n,
                got: c.ncols(),
            });
        }
        if g.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let sym = (&g + g.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(QpError::NotPositiveDefinite)?;
        let j0 = linv.transpose();
        let ginv = &j0 * j0.transpose();
        let mut c = c;
        let mut row_scale = DVector::from_element(c.nrows(), 1.0);
        for r in 0..c.nrows() {
            let norm = c.row(r).norm();
            if norm > 0.0 {
                row_scale[r] = 1.0 / norm;
                let scaled = c.row(r) / norm;
                c.set_row(r, &scaled);
            }
        }
        let max_iter = 10 * (c.nrows() + n) + 100;
        Ok(DenseQp {
            g: sym,
            j0,
            ginv,
            c,
            row_scale,
            max_iter,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.g.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.c.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Objective `0.5 x'Gx + a'x`.
    pub fn objective(&self, a: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + a.dot(x)
    }

    pub fn solve(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<QpSolution, QpError> {
        let n = self.num_vars();
        let m = self.num_constraints();
        if a.len() != n {
            return Err(QpError::Dimension {
                expected: n,
                got: a.len(),
            });
        }
        if b.len() != m {
            return Err(QpError::Dimension {
                expected: m,
                got: b.len(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let b = b.component_mul(&self.row_scale);

        let mut x = -(&self.ginv * a);
        let mut j = self.j0.clone();
        let mut r = DMatrix::<f64>::zeros(n, n);
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut is_active = vec![false; m];
        let mut iterations = 0;

        loop {
            // Step 1: most violated constraint.
            let mut p = None;
            let mut worst = -FEAS_TOL;
            for i in 0..m {
                if is_active[i] {
                    continue;
                }
                let s = self.c.row(i).dot(&x.transpose()) - b[i];
                if s < worst {
                    worst = s;
                    p = Some(i);
                }
            }
            let Some(p) = p else {
                break;
            };
            let np: DVector<f64> = self.c.row(p).transpose();
            let mut up = u.clone();
            up.push(0.0);

            // Step 2: move until p becomes active.
            loop {
                iterations += 1;
                if iterations > self.max_iter {
                    return Err(QpError::IterationLimit(self.max_iter));
                }
                let q = active.len();
                let d = j.transpose() * &np;
                let mut z = DVector::zeros(n);
                for col in q..n {
                    z.axpy(d[col], &j.column(col), 1.0);
                }
                let rv = back_substitute(&r, &d, q);

                let mut t1 = f64::INFINITY;
                let mut drop_k = None;
                for (kk, &rk) in rv.iter().enumerate() {
                    if rk > 1e-14 {
                        let t = up[kk] / rk;
                        if t < t1 {
                            t1 = t;
                            drop_k = Some(kk);
                        }
                    }
                }
                let znp = z.dot(&np);
                let sp = np.dot(&x) - b[p];
                let t2 = if znp > 1e-14 { -sp / znp } else { f64::INFINITY };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Ok(self.finish(QpStatus::Infeasible, x, &active, &u, a, iterations));
                }
                if t2.is_finite() {
                    x.axpy(t, &z, 1.0);
                }
                for kk in 0..q {
                    up[kk] -= t * rv[kk];
                }
                up[q] += t;

                if t2 <= t1 {
                    add_constraint(&mut j, &mut r, d, q);
                    active.push(p);
                    is_active[p] = true;
                    u = up;
                    break;
                }
                let k = drop_k.expect("partial step has a blocking constraint");
                drop_constraint(&mut j, &mut r, k, q);
                is_active[active[k]] = false;
                active.remove(k);
                up.remove(k);
            }
        }
        Ok(self.finish(QpStatus::Optimal, x, &active, &u, a, iterations))
    }

    fn finish(
        &self,
        status: QpStatus,
        x: DVector<f64>,
        active: &[usize],
        u: &[f64],
        a: &DVector<f64>,
        iterations: usize,
    ) -> QpSolution {
        let value = self.objective(a, &x);
        let active = active
            .iter()
            .zip(u)
            .map(|(&i, &ui)| (i, ui * self.row_scale[i]))
            .collect();
        QpSolution {
            status,
            x,
            active,
            value,
            iterations,
        }
    }

    /// Stationarity residual `‖Gx + a − C'λ‖∞` for a returned solution,
    /// using the original (unscaled) constraint rows.
    pub fn kkt_residual(&self, a: &DVector<f64>, sol: &QpSolution) -> f64 {
        let mut grad = &self.g * &sol.x + a;
        for &(i, lam) in &sol.active {
            let row: DVector<f64> = self.c.row(i).transpose() / self.row_scale[i];
            grad.axpy(-lam, &row, 1.0);
        }
        grad.amax()
    }

    /// Largest violation `b_i − c_i'x` over the original constraint rows.
    pub fn max_violation(&self, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.num_constraints() {
            let s = b[i] - self.c.row(i).dot(&x.transpose()) / self.row_scale[i];
            worst = worst.max(s);
        }
        worst
    }
}

fn back_substitute(r: &DMatrix<f64>, d: &DVector<f64>, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; q];
    for i in (0..q).rev() {
        let mut s = d[i];
        for k in i + 1..q {
            s -= r[(i, k)] * out[k];
        }
        out[i] = s / r[(i, i)];
    }
    out
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j: &mut DMatrix<f64>, c0: usize, c1: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let a = j[(row, c0)];
        let b = j[(row, c1)];
        j[(row, c0)] = c * a + s * b;
        j[(row, c1)] = -s * a + c * b;
    }
}

fn add_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, mut d: DVector<f64>, q: usize) {
    let n = d.len();
    for k in (q + 1..n).rev() {
        let (c, s, h) = givens(d[k - 1], d[k]);
        if s == 0.0 {
            continue;
        }
        d[k - 1] = h;
        d[k] = 0.0;
        rotate_columns(j, k - 1, k, c, s);
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

fn drop_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, k: usize, q: usize) {
    for col in k..q - 1 {
        for i in 0..q {
            r[(i, col)] = r[(i, col + 1)];
        }
    }
    for i in 0..q {
        r[(i, q - 1)] = 0.0;
    }
    for row in k..q - 1 {
        let (c, s, h) = givens(r[(row, row)], r[(row + 1, row)]);
        r[(row, row)] = h;
        r[(row + 1, row)] = 0.0;
        for col in row + 1..q - 1 {
            let a = r[(row, col)];
            let b = r[(row + 1, col)];
            r[(row, col)] = c * a + s * b;
            r[(row + 1, col)] = -s * a + c * b;
        }
        rotate_columns(j, row, row + 1, c, s);
    }
}
