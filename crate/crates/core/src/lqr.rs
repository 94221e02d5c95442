//! Discrete-time LQR via the structure-preserving doubling algorithm, plus
//! zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LqrError {
    #[error("dimension mismatch in LQR data")]
    Dimension,
    #[error("Riccati iteration did not converge")]
    NoConvergence,
    #[error("singular matrix in Riccati iteration")]
    Singular,
    #[error("closed loop is not Schur stable (spectral radius {0})")]
    Unstable(f64),
}

/// Solution of the discrete algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Lqr {
    /// Feedback gain for the convention `u = K x`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Lqr, LqrError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(LqrError::Dimension);
    }
    let rinv = r.clone().try_inverse().ok_or(LqrError::Singular)?;
    let mut ak = a.clone();
    let mut gk = b * &rinv * b.transpose();
    let mut hk = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..200 {
        let w = (&eye + &gk * &hk).try_inverse().ok_or(LqrError::Singular)?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let delta = (&h_next - &hk).amax();
        let scale = 1.0 + h_next.amax();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-14 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LqrError::NoConvergence);
    }
    let p = (&hk + hk.transpose()) * 0.5;
    let s = r + b.transpose() * &p * b;
    let sinv = s.try_inverse().ok_or(LqrError::Singular)?;
    let k = -(sinv * b.transpose() * &p * a);
    let rho = spectral_radius(&(a + b * &k));
    if rho >= 1.0 {
        return Err(LqrError::Unstable(rho));
    }
    Ok(Lqr { k, p })
}

/// Residual of the Riccati equation for a candidate `P`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let s = r + b.transpose() * p * b;
    let sinv = s.try_inverse().expect("invertible");
    let rhs = a.transpose() * p * a - a.transpose() * p * b * sinv * b.transpose() * p * a + q;
    (rhs - p).amax()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.norm()))
}

/// Exact zero-order-hold discretization of `ẋ = A x + Σ_k E_k s_k` where each
/// exogenous matrix `E_k` multiplies a signal held constant over `ts`.
/// Returns `(A_d, [E_k,d])`.
pub fn zoh(a: &DMatrix<f64>, inputs: &[&DMatrix<f64>], ts: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = a.nrows();
    let total: usize = inputs.iter().map(|e| e.ncols()).sum();
    let mut aug = DMatrix::zeros(n + total, n + total);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    let mut col = n;
    for e in inputs {
        aug.view_mut((0, col), (n, e.ncols())).copy_from(&(*e * ts));
        col += e.ncols();
    }
    let ex = aug.exp();
    let ad = ex.view((0, 0), (n, n)).into_owned();
    let mut out = Vec::with_capacity(inputs.len());
    let mut col = n;
    for e in inputs {
        out.push(ex.view((0, col), (n, e.ncols())).into_owned());
        col += e.ncols();
    }
    (ad, out)
}

/// Forward-Euler discretization of one vector field evaluation.
pub fn euler_step(x: &DVector<f64>, xdot: &DVector<f64>, ts: f64) -> DVector<f64> {
    x + xdot * ts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_riccati_closed_form() {
        // a = 1, b = 1, q = 1, r = 1: p = (1 + sqrt 5) / 2.
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = dlqr(&one, &one, &one, &one).unwrap();
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - p).abs() < 1e-12);
        assert!((sol.k[(0, 0)] + p / (1.0 + p)).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.1);
        let sol = dlqr(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &sol.p) < 1e-9);
        assert!(spectral_radius(&(&a + &b * &sol.k)) < 1.0);
    }

    #[test]
    fn zoh_of_integrator() {
        let a = DMatrix::zeros(1, 1);
        let b = DMatrix::from_element(1, 1, 2.0);
        let (ad, bd) = zoh(&a, &[&b], 0.5);
        assert!((ad[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((bd[0][(0, 0)] - 1.0).abs() < 1e-15);
    }
}
