//! Dense two-phase simplex for small standard-form linear programs.
//!
//! Solves `min c'y  s.t.  A y = b, y >= 0` with Bland's rule, so the pivot
//! sequence (and therefore every result) is fully deterministic. The problems
//! handled here have a handful of rows and up to a few thousand columns, which
//! is exactly the shape of the dual of a support-function query on an
//! H-polytope.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: A is {rows}x{cols}, b has {b_len}, c has {c_len}")]
    Dimension {
        rows: usize,
        cols: usize,
        b_len: usize,
        c_len: usize,
    },
    #[error("non-finite LP data")]
    NonFinite,
    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { y: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: usize,
    cols: usize, // structural + artificial columns, excluding rhs
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64]) {
        let w = self.cols + 1;
        let p = self.data[pr * w + pc];
        for c in 0..w {
            self.data[pr * w + c] /= p;
        }
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                for c in 0..w {
                    self.data[r * w + c] -= f * self.data[pr * w + c];
                }
            }
        }
        let f = obj[pc];
        if f != 0.0 {
            for c in 0..w {
                obj[c] -= f * self.data[pr * w + c];
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the reduced-cost row `obj` (length cols+1,
    /// last entry holds minus the objective value). Columns at or beyond
    /// `limit` never enter.
    fn run(&mut self, obj: &mut [f64], limit: usize, pivots: &mut usize) -> Result<bool, LpError> {
        loop {
            let entering = (0..limit).find(|&c| obj[c] < -PIVOT_TOL);
            let Some(pc) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - 1e-14
                                || (ratio <= bv + 1e-14 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = best else {
                return Ok(false);
            };
            self.pivot(pr, pc, obj);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::PivotLimit(MAX_PIVOTS));
            }
        }
    }
}

/// Minimizes `c'y` subject to `a y = b`, `y >= 0`.
pub fn solve_standard(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Result<LpOutcome, LpError> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(LpError::Dimension {
            rows: m,
            cols: n,
            b_len: b.len(),
            c_len: c.len(),
        });
    }
    if a.iter().chain(b).chain(c).any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite);
    }
    let cols = n + m;
    let w = cols + 1;
    let mut data = vec![0.0; m * w];
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            data[r * w + j] = sign * a[(r, j)];
        }
        data[r * w + n + r] = 1.0;
        data[r * w + cols] = sign * b[r];
    }
    let mut t = Tableau {
        rows: m,
        cols,
        data,
        basis: (n..n + m).collect(),
    };

    // Phase 1: minimize the sum of artificials.
    let mut obj = vec![0.0; w];
    for r in 0..m {
        for cc in 0..w {
            if cc < n || cc == cols {
                obj[cc] -= t.at(r, cc);
            }
        }
    }
    let mut pivots = 0;
    t.run(&mut obj, n, &mut pivots)?;
    let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if -obj[cols] > 1e-9 * scale {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut r = 0;
    while r < t.rows {
        if t.basis[r] >= n {
            let pc = (0..n).find(|&cc| t.at(r, cc).abs() > 1e-9);
            match pc {
                Some(pc) => {
                    let mut dummy = vec![0.0; w];
                    t.pivot(r, pc, &mut dummy);
                }
                None => {
                    let start = r * w;
                    t.data.drain(start..start + w);
                    t.basis.remove(r);
                    t.rows -= 1;
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase 2.
    let mut obj = vec![0.0; w];
    obj[..n].copy_from_slice(c);
    for r in 0..t.rows {
        let bc = t.basis[r];
        let f = if bc < n { c[bc] } else { 0.0 };
        if f != 0.0 {
            for cc in 0..w {
                obj[cc] -= f * t.at(r, cc);
            }
        }
    }
    if !t.run(&mut obj, n, &mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut y = DVector::zeros(n);
    for r in 0..t.rows {
        if t.basis[r] < n {
            y[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let value = c.iter().zip(y.iter()).map(|(ci, yi)| ci * yi).sum();
    Ok(LpOutcome::Optimal { y, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_transport_problem() {
        // min y0 + 2 y1 + 3 y2, y0 + y1 + y2 = 1, y1 - y2 = 0.2
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0]);
        let out = solve_standard(&a, &[1.0, 0.2], &[1.0, 2.0, 3.0]).unwrap();
        match out {
            LpOutcome::Optimal { y, value } => {
                assert!((value - 1.2).abs() < 1e-12);
                assert!((y[0] - 0.8).abs() < 1e-12);
                assert!((y[1] - 0.2).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(
            solve_standard(&a, &[-1.0], &[0.0, 0.0]).unwrap(),
            LpOutcome::Infeasible
        );
    }

    #[test]
    fn detects_unboundedness() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert_eq!(
            solve_standard(&a, &[0.0], &[-1.0, 0.0]).unwrap(),
            LpOutcome::Unbounded
        );
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        match solve_standard(&a, &[1.0, 2.0], &[1.0, 0.5]).unwrap() {
            LpOutcome::Optimal { value, .. } => assert!((value - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
