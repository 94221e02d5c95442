//! Online tube MPC for one subsystem.
//!
//! The decision vector is `(x̂(0), v(0), …, v(N-1))`; nominal states are
//! eliminated (condensed form), so each step solves one dense QP whose
//! right-hand side depends only on the current state.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::HPolytope;
use crate::netmodel::SubsystemModel;
use crate::qp::{DenseQp, QpError, QpStatus};
use crate::setsynth::TubeController;

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("input gain {0} is too close to zero")]
    Invertibility(f64),
    #[error("input {u:?} leaves U although the optimizer was feasible")]
    CertificateViolation { u: Vec<f64> },
    #[error("control law needs an optimal MPC solution")]
    NotOptimal,
    #[error("non-finite state passed to the MPC")]
    NonFinite,
    #[error("state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcStatus {
    Optimal,
    Infeasible,
}

impl MpcStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MpcStatus::Optimal => "optimal",
            MpcStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub xhat0: DVector<f64>,
    pub v_seq: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: MpcStatus,
    pub iterations: usize,
    /// Active QP rows with their multipliers.
    pub active: Vec<(usize, f64)>,
}

/// Condensed QP built once per controller.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub controller: TubeController,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    qp: DenseQp,
    /// Prediction maps `x̂(k) = S_k ξ`, `k = 0..=N`.
    s: Vec<DMatrix<f64>>,
    tube_rows: usize,
    b_fixed: DVector<f64>,
}

fn stack(blocks: &[(DMatrix<f64>, DVector<f64>)], nv: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows: usize = blocks.iter().map(|(c, _)| c.nrows()).sum();
    let mut c = DMatrix::zeros(rows, nv);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (cb, bb) in blocks {
        c.rows_mut(r, cb.nrows()).copy_from(cb);
        b.rows_mut(r, bb.len()).copy_from(bb);
        r += cb.nrows();
    }
    (c, b)
}

impl MpcProblem {
    pub fn new(model: &SubsystemModel, controller: TubeController) -> Result<Self, MpcError> {
        let a = model.a.clone();
        let b = model.b.clone();
        let n = a.nrows();
        let m = b.ncols();
        let horizon = controller.horizon;
        let nv = n + horizon * m;

        let mut s = Vec::with_capacity(horizon + 1);
        let mut s0 = DMatrix::zeros(n, nv);
        s0.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        s.push(s0);
        for k in 0..horizon {
            let mut next = &a * &s[k];
            let mut bv = next.view_mut((0, n + k * m), (n, m));
            bv += &b;
            s.push(next);
        }
        let e = |k: usize| {
            let mut ek = DMatrix::zeros(m, nv);
            ek.view_mut((0, n + k * m), (m, m)).copy_from(&DMatrix::identity(m, m));
            ek
        };
        let c = &controller;
        let mut h = DMatrix::zeros(nv, nv);
        for k in 0..horizon {
            h += s[k].transpose() * &c.q * &s[k];
            let ek = e(k);
            h += ek.transpose() * &c.r * &ek;
        }
        h += s[horizon].transpose() * &c.p * &s[horizon];
        let g = &h + h.transpose();

        let zt = &c.z_tube;
        let mut tube = DMatrix::zeros(zt.num_halfspaces(), nv);
        tube.view_mut((0, 0), (zt.num_halfspaces(), n)).copy_from(zt.normals());
        let mut blocks = vec![(tube, DVector::zeros(zt.num_halfspaces()))];
        for k in 0..horizon {
            blocks.push((-(c.xhat.normals() * &s[k]), -c.xhat.offsets()));
            blocks.push((-(c.v.normals() * e(k)), -c.v.offsets()));
        }
        blocks.push((-(c.xf.normals() * &s[horizon]), -c.xf.offsets()));
        let (cmat, b_fixed) = stack(&blocks, nv);
        let qp = DenseQp::new(g, cmat)?;
        Ok(MpcProblem {
            controller: controller.clone(),
            a,
            b,
            qp,
            s,
            tube_rows: zt.num_halfspaces(),
            b_fixed,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let zt = &self.controller.z_tube;
        let mut b = self.b_fixed.clone();
        let t = zt.normals() * x - zt.offsets();
        b.rows_mut(0, self.tube_rows).copy_from(&t);
        b
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<MpcSolution, MpcError> {
        solve_mpc(self, x)
    }

    /// Nominal predicted states `x̂(0..=N)` of a solution.
    pub fn nominal_states(&self, sol: &MpcSolution) -> Vec<DVector<f64>> {
        let xi = self.pack(sol);
        self.s.iter().map(|sk| sk * &xi).collect()
    }

    fn pack(&self, sol: &MpcSolution) -> DVector<f64> {
        let n = self.n();
        let m = self.m();
        let mut xi = DVector::zeros(n + self.controller.horizon * m);
        xi.rows_mut(0, n).copy_from(&sol.xhat0);
        for (k, v) in sol.v_seq.iter().enumerate() {
            xi.rows_mut(n + k * m, m).copy_from(v);
        }
        xi
    }

    /// Largest constraint violation of a stored solution for state `x`.
    pub fn solution_violation(&self, x: &DVector<f64>, sol: &MpcSolution) -> f64 {
        self.qp.max_violation(&self.rhs(x), &self.pack(sol))
    }

    /// KKT stationarity residual of a solution with the given active multipliers.
    pub fn kkt_residual(&self, sol: &MpcSolution) -> f64 {
        let xi = self.pack(sol);
        let qs = crate::qp::QpSolution {
            status: QpStatus::Optimal,
            x: xi,
            active: sol.active.clone(),
            value: sol.cost,
            iterations: sol.iterations,
        };
        self.qp.kkt_residual(&DVector::zeros(self.qp.num_vars()), &qs)
    }

    /// Raw QP access for verification.
    pub fn qp(&self) -> &DenseQp {
        &self.qp
    }

    pub fn qp_rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        self.rhs(x)
    }
}

/// Solves the tube MPC problem for the current (deviation) state `x`.
pub fn solve_mpc(p: &MpcProblem, x: &DVector<f64>) -> Result<MpcSolution, MpcError> {
    if x.len() != p.n() {
        return Err(MpcError::Dimension {
            expected: p.n(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MpcError::NonFinite);
    }
    let n = p.n();
    let m = p.m();
    let nv = p.qp.num_vars();
    let sol = p.qp.solve(&DVector::zeros(nv), &p.rhs(x))?;
    let status = match sol.status {
        QpStatus::Optimal => MpcStatus::Optimal,
        QpStatus::Infeasible => MpcStatus::Infeasible,
    };
    let (xhat0, v_seq, cost) = match status {
        MpcStatus::Optimal => (
            sol.x.rows(0, n).into_owned(),
            (0..p.controller.horizon)
                .map(|k| sol.x.rows(n + k * m, m).into_owned())
                .collect(),
            sol.value,
        ),
        MpcStatus::Infeasible => (
            DVector::zeros(n),
            vec![DVector::zeros(m); p.controller.horizon],
            f64::INFINITY,
        ),
    };
    Ok(MpcSolution {
        xhat0,
        v_seq,
        cost,
        status,
        iterations: sol.iterations,
        active: sol.active,
    })
}

/// Composite law `u = g⁻¹ [−h + v(0) + K (x − x̂(0))]`, certified against `U`.
pub fn control_law(
    p: &MpcProblem,
    model: &SubsystemModel,
    x: &DVector<f64>,
    psi: &DVector<f64>,
    sol: &MpcSolution,
) -> Result<DVector<f64>, MpcError> {
    if sol.status != MpcStatus::Optimal {
        return Err(MpcError::NotOptimal);
    }
    let u = raw_law(p, model, x, psi, &sol.v_seq[0], &sol.xhat0)?;
    if !model.u_set.contains_point(&u, 1e-9) {
        return Err(MpcError::CertificateViolation {
            u: u.iter().copied().collect(),
        });
    }
    Ok(u)
}

fn raw_law(
    p: &MpcProblem,
    model: &SubsystemModel,
    x: &DVector<f64>,
    psi: &DVector<f64>,
    v0: &DVector<f64>,
    xhat0: &DVector<f64>,
) -> Result<DVector<f64>, MpcError> {
    let g = model.matched.gain(x, psi);
    if !g.is_finite() || g.abs() < 1e-9 {
        return Err(MpcError::Invertibility(g));
    }
    let h = model.matched.drift(x, psi, model.m());
    let kz = &p.controller.k * (x - xhat0);
    Ok((v0 - h + kz) / g)
}

/// Fallback when the optimizer is infeasible: the auxiliary law around the
/// origin, saturated to the input box.
pub fn fallback_law(
    p: &MpcProblem,
    model: &SubsystemModel,
    x: &DVector<f64>,
    psi: &DVector<f64>,
) -> Result<DVector<f64>, MpcError> {
    let m = model.m();
    let u = raw_law(p, model, x, psi, &DVector::zeros(m), &DVector::zeros(p.n()))?;
    Ok(saturate(&model.u_set, &u))
}

fn saturate(u_set: &HPolytope, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        u.len(),
        u.iter().enumerate().map(|(l, v)| match u_set.coord_interval(l) {
            Ok(r) => v.clamp(r.lo, r.hi),
            Err(_) => *v,
        }),
    )
}

/// Whether `x` lies in the feasible region of the MPC problem.
pub fn feasible_region_probe(p: &MpcProblem, x: &DVector<f64>) -> bool {
    matches!(solve_mpc(p, x), Ok(s) if s.status == MpcStatus::Optimal)
}
