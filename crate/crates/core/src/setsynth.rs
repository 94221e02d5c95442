//! Offline decentralized tube-controller design.
//!
//! For one subsystem: bound the coupling disturbance from the parents'
//! constraint sets, pick an LQR auxiliary gain, build the tube cross-section
//! as an outer approximation of the minimal robust positively invariant set,
//! tighten state and input constraints, and compute a terminal set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, HPolytope, Interval, SetSpec, SET_TOL};
use crate::lqr::{self, LqrError};
use crate::netmodel::{Id, SubsystemModel};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error("input gain vanishes or changes sign near {0:?} (g = {1})")]
    Invertibility(Vec<f64>, f64),
    #[error("output feedback requires a unit matched map")]
    OutputFeedbackNonlinear,
    #[error("invalid artifact: {0}")]
    Artifact(String),
}

/// Why a controller cannot be designed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum DesignFailure {
    /// `W ⊕ B_ω` does not fit inside the state constraints.
    StepIii { reason: String },
    /// The invariant tube cannot be built inside the state constraints.
    StepIv { reason: String },
    /// A tightened set came out empty or lost the origin.
    Tightening { set: String, reason: String },
}

impl std::fmt::Display for DesignFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DesignFailure::StepIii { reason } => write!(f, "step III: {reason}"),
            DesignFailure::StepIv { reason } => write!(f, "step IV: {reason}"),
            DesignFailure::Tightening { set, reason } => write!(f, "step V ({set}): {reason}"),
        }
    }
}

/// Which signal the local controller feeds back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    #[default]
    State,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub omega: f64,
    pub zbar_inflation: f64,
    pub mrpi_eps: f64,
    pub mrpi_max_terms: usize,
    pub sample_inflation: f64,
    pub samples: usize,
    pub feedback: Feedback,
}

impl DesignOptions {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize) -> Self {
        DesignOptions {
            q,
            r,
            horizon,
            omega: 1e-3,
            zbar_inflation: 0.05,
            mrpi_eps: 1e-3,
            mrpi_max_terms: 400,
            sample_inflation: 0.05,
            samples: 10_000,
            feedback: Feedback::State,
        }
    }
}

/// Bounds of the matched nonlinearity over `X × Ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedBounds {
    /// Range of `g⁻¹`.
    pub g_inv: Interval,
    /// Range of each drift component.
    pub h: Vec<Interval>,
    pub inflation: f64,
    pub closed_form: bool,
}

/// Designed local controller.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeController {
    pub id: Id,
    pub k: DMatrix<f64>,
    pub z: HPolytope,
    /// Tube constraint used online (`Z`, or `Z ⊖ O` with output feedback).
    pub z_tube: HPolytope,
    pub uz: HPolytope,
    pub xhat: HPolytope,
    pub v: HPolytope,
    pub xf: HPolytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub horizon: usize,
    pub w: HPolytope,
    pub zbar0: HPolytope,
    pub omega: f64,
    pub bounds: MatchedBounds,
    pub feedback: Feedback,
    pub mrpi_terms: usize,
    pub mrpi_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignOutcome {
    Feasible(Box<TubeController>),
    Infeasible(DesignFailure),
}

impl DesignOutcome {
    pub fn controller(self) -> Option<TubeController> {
        match self {
            DesignOutcome::Feasible(c) => Some(*c),
            DesignOutcome::Infeasible(_) => None,
        }
    }
}

/// Box over-approximation of `w(Ψ)`. Parents missing from `parent_sets` are
/// treated as disconnected and contribute nothing. The coupling is linear,
/// so interval arithmetic gives the exact bounding box.
pub fn coupling_set(model: &SubsystemModel, parent_sets: &BTreeMap<Id, HPolytope>) -> Result<HPolytope, SynthError> {
    let n = model.n();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for (idx, (j, c)) in model.psi_layout.iter().enumerate() {
        let Some(set) = parent_sets.get(j) else {
            continue;
        };
        let range = set.coord_interval(*c)?;
        for r in 0..n {
            let t = range.scale(model.coupling[(r, idx)]);
            lo[r] += t.lo;
            hi[r] += t.hi;
        }
    }
    Ok(HPolytope::from_bounds(&lo, &hi)?)
}

/// Box `Ψ_i` as per-entry intervals.
pub fn psi_box(model: &SubsystemModel, parent_sets: &BTreeMap<Id, HPolytope>) -> Result<Vec<Interval>, SynthError> {
    model
        .psi_layout
        .iter()
        .map(|(j, c)| match parent_sets.get(j) {
            Some(s) => Ok(s.coord_interval(*c)?),
            None => Ok(Interval::point(0.0)),
        })
        .collect()
}

fn grid_points(boxes: &[Interval], n_samples: usize) -> Vec<Vec<f64>> {
    let d = boxes.len();
    if d == 0 {
        return vec![Vec::new()];
    }
    let per = ((n_samples as f64).powf(1.0 / d as f64).floor() as usize).max(2);
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        out.push(
            idx.iter()
                .zip(boxes)
                .map(|(&i, b)| b.lo + (b.hi - b.lo) * i as f64 / (per - 1) as f64)
                .collect(),
        );
        let mut k = 0;
        loop {
            if k == d {
                return out;
            }
            idx[k] += 1;
            if idx[k] < per {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Sampled bounds of `g⁻¹` and `h` over `X × Ψ`, inflated by `inflation`.
pub fn estimate_matched_bounds(
    model: &SubsystemModel,
    parent_sets: &BTreeMap<Id, HPolytope>,
    n_samples: usize,
    inflation: f64,
) -> Result<MatchedBounds, SynthError> {
    let n = model.n();
    let m = model.m();
    let mut boxes: Vec<Interval> = (0..n)
        .map(|c| model.x_set.coord_interval(c))
        .collect::<Result<_, _>>()?;
    boxes.extend(psi_box(model, parent_sets)?);
    let mut g_range: Option<Interval> = None;
    let mut h_range: Vec<Option<Interval>> = vec![None; m];
    for pt in grid_points(&boxes, n_samples) {
        let x = DVector::from_column_slice(&pt[..n]);
        let psi = DVector::from_column_slice(&pt[n..]);
        if !model.x_set.contains_point(&x, SET_TOL) {
            continue;
        }
        let g = model.matched.gain(&x, &psi);
        let g_ok = g.is_finite() && g.abs() >= 1e-9;
        let sign_ok = g_range.map(|r| r.lo.signum() == (1.0 / g).signum()).unwrap_or(true);
        if !g_ok || !sign_ok {
            return Err(SynthError::Invertibility(pt.clone(), g));
        }
        let gi = 1.0 / g;
        g_range = Some(g_range.map(|r| r.hull(gi)).unwrap_or(Interval::point(gi)));
        let h = model.matched.drift(&x, &psi, m);
        for (l, slot) in h_range.iter_mut().enumerate() {
            *slot = Some(slot.map(|r| r.hull(h[l])).unwrap_or(Interval::point(h[l])));
        }
    }
    let g_inv = g_range.unwrap_or(Interval::point(1.0)).inflate(inflation);
    if g_inv.lo <= 0.0 && g_inv.hi >= 0.0 {
        return Err(SynthError::Invertibility(Vec::new(), 0.0));
    }
    Ok(MatchedBounds {
        g_inv,
        h: h_range
            .into_iter()
            .map(|r| r.unwrap_or(Interval::point(0.0)).inflate(inflation))
            .collect(),
        inflation,
        closed_form: false,
    })
}

/// Closed-form bounds when the matched map provides them, sampling otherwise.
pub fn matched_bounds(
    model: &SubsystemModel,
    parent_sets: &BTreeMap<Id, HPolytope>,
    opts: &DesignOptions,
) -> Result<MatchedBounds, SynthError> {
    let x_box: Vec<Interval> = (0..model.n())
        .map(|c| model.x_set.coord_interval(c))
        .collect::<Result<_, _>>()?;
    if let Some((g_inv, h)) = model.matched.closed_form_bounds(&x_box, model.m()) {
        if g_inv.lo <= 0.0 && g_inv.hi >= 0.0 {
            return Err(SynthError::Invertibility(Vec::new(), 0.0));
        }
        return Ok(MatchedBounds {
            g_inv,
            h,
            inflation: 0.0,
            closed_form: true,
        });
    }
    estimate_matched_bounds(model, parent_sets, opts.samples, opts.sample_inflation)
}

/// Result of the ε-outer mRPI computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mrpi {
    pub z: HPolytope,
    pub terms: usize,
    pub alpha: f64,
}

/// Generators of `(1-α)⁻¹ ⊕_{i<s} Φ^i W` together with `(s, α)`, where `s`
/// is the first index with `Φ^s W ⊆ α W` and `α <= ε/(1+ε)`. `W` must be a
/// centered zonotope with the origin in its interior.
fn mrpi_generators(
    phi: &DMatrix<f64>,
    w: &HPolytope,
    eps: f64,
    max_terms: usize,
) -> Result<Option<(DMatrix<f64>, usize, f64)>, SynthError> {
    let (wc, wg) = w.generator_form().ok_or(GeometryError::Unsupported)?;
    if wc.amax() > 0.0 || !w.origin_interior() {
        return Err(GeometryError::Unsupported.into());
    }
    let n = phi.nrows();
    let normals = w.normals();
    let offsets = w.offsets();
    let target = eps / (1.0 + eps);
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut gens: Vec<DMatrix<f64>> = Vec::new();
    for s in 1..=max_terms {
        gens.push(&power * &wg);
        power = phi * &power;
        let pg = &power * &wg;
        let mut alpha = 0.0f64;
        for r in 0..normals.nrows() {
            let nr = normals.row(r).transpose();
            let h: f64 = (pg.transpose() * &nr).iter().map(|v| v.abs()).sum();
            alpha = alpha.max(h / offsets[r]);
        }
        if alpha <= target {
            let cols: usize = gens.iter().map(|g| g.ncols()).sum();
            let mut all = DMatrix::zeros(n, cols);
            let mut c = 0;
            for g in &gens {
                all.columns_mut(c, g.ncols()).copy_from(g);
                c += g.ncols();
            }
            all /= 1.0 - alpha;
            return Ok(Some((geometry::compact_generators(&all), s, alpha)));
        }
    }
    Ok(None)
}

/// Outer approximation of the minimal RPI set of `x⁺ = Φx + w`, `w ∈ W`.
/// Returns `None` if `Φ` does not contract `W` within `max_terms`.
pub fn mrpi_outer(phi: &DMatrix<f64>, w: &HPolytope, eps: f64, max_terms: usize) -> Result<Option<Mrpi>, SynthError> {
    let Some((gens, terms, alpha)) = mrpi_generators(phi, w, eps, max_terms)? else {
        return Ok(None);
    };
    Ok(Some(Mrpi {
        z: HPolytope::zonotope(DVector::zeros(phi.nrows()), gens)?,
        terms,
        alpha,
    }))
}

/// One-step robust invariance `Φ Z ⊕ W ⊆ Z`, checked through support values.
pub fn is_rpi(phi: &DMatrix<f64>, z: &HPolytope, w: &HPolytope, tol: f64) -> Result<bool, SynthError> {
    let a = z.normals();
    let b = z.offsets();
    for r in 0..a.nrows() {
        let nr: DVector<f64> = a.row(r).transpose();
        let hz = z.support_value(&(phi.transpose() * &nr))?;
        let hw = w.support_value(&nr)?;
        if hz + hw > b[r] + tol {
            return Ok(false);
        }
    }
    Ok(true)
}

const MAX_FACET_SUBSETS: usize = 6000;

fn subset_count(g: usize, k: usize) -> usize {
    let mut c: f64 = 1.0;
    for i in 0..k {
        c *= (g - i) as f64 / (i + 1) as f64;
    }
    c as usize
}

/// Tube set for `Φ` and the design disturbance, simplified to a manageable
/// number of facets when needed and verified invariant for `w_true`.
fn tube_set(
    phi: &DMatrix<f64>,
    w_design: &HPolytope,
    w_true: &HPolytope,
    opts: &DesignOptions,
) -> Result<Option<Mrpi>, SynthError> {
    let n = phi.nrows();
    let Some((all, terms, alpha)) = mrpi_generators(phi, w_design, opts.mrpi_eps, opts.mrpi_max_terms)? else {
        return Ok(None);
    };
    if n <= 2 || subset_count(all.ncols() + n, n - 1) <= MAX_FACET_SUBSETS {
        let z = HPolytope::zonotope(DVector::zeros(n), all)?;
        return Ok(Some(Mrpi { z, terms, alpha }));
    }
    let mut keep = 2 * n;
    while subset_count(keep + n, n - 1) <= MAX_FACET_SUBSETS {
        let red = geometry::reduce_generators(&all, keep);
        let z = HPolytope::zonotope(DVector::zeros(n), red)?;
        if is_rpi(phi, &z, w_true, 1e-10)? {
            return Ok(Some(Mrpi { z, terms, alpha }));
        }
        keep += n;
    }
    for depth in [4usize, 8, 12, 16, 24, 32] {
        let z = phi_template(phi, &all, depth)?;
        if is_rpi(phi, &z, w_true, 1e-10)? {
            return Ok(Some(Mrpi { z, terms, alpha }));
        }
    }
    Ok(None)
}

/// Outer bound of the zonotope `gens` on the directions `(Φᵀ)^k e_i`,
/// `k <= depth`. Closed under `Φᵀ` up to the last level, so it inherits
/// invariance from the zonotope whenever the tail is small.
fn phi_template(phi: &DMatrix<f64>, gens: &DMatrix<f64>, depth: usize) -> Result<HPolytope, SynthError> {
    let n = phi.nrows();
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let mut d = DVector::zeros(n);
        d[i] = 1.0;
        for _ in 0..=depth {
            let norm = d.norm();
            if norm < 1e-12 {
                break;
            }
            let unit: DVector<f64> = &d / norm;
            if !dirs.iter().any(|e: &DVector<f64>| (e - &unit).amax() < 1e-9 || (e + &unit).amax() < 1e-9) {
                dirs.push(unit);
            }
            d = phi.transpose() * d;
        }
    }
    let mut a = DMatrix::zeros(2 * dirs.len(), n);
    let mut b = DVector::zeros(2 * dirs.len());
    for (r, d) in dirs.iter().enumerate() {
        let h: f64 = (gens.transpose() * d).iter().map(|v| v.abs()).sum();
        a.set_row(2 * r, &d.transpose());
        a.set_row(2 * r + 1, &(-d.transpose()));
        b[2 * r] = h;
        b[2 * r + 1] = h;
    }
    Ok(HPolytope::from_halfspaces(a, b)?)
}

/// Tightened sets `X̂ = X ⊖ Z` and the input set `V` for the auxiliary
/// inputs, such that `g⁻¹ (−h + v + u_z) ∈ U` for every admissible value.
pub fn tighten_constraints(
    model: &SubsystemModel,
    z: &HPolytope,
    k: &DMatrix<f64>,
    bounds: &MatchedBounds,
) -> Result<Result<(HPolytope, HPolytope, HPolytope), DesignFailure>, SynthError> {
    let Some(xhat) = model.x_set.pontryagin_diff(z)? else {
        return Ok(Err(DesignFailure::Tightening {
            set: "Xhat".into(),
            reason: "X ⊖ Z is empty".into(),
        }));
    };
    if !xhat.origin_interior() {
        return Ok(Err(DesignFailure::Tightening {
            set: "Xhat".into(),
            reason: "origin not interior to X ⊖ Z".into(),
        }));
    }
    let uz = z.linear_image_box(k)?;
    let m = model.m();
    let umax = bounds.g_inv.hi.abs().max(bounds.g_inv.lo.abs());
    if bounds.g_inv.lo <= 0.0 {
        return Err(SynthError::Invertibility(Vec::new(), 0.0));
    }
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for l in 0..m {
        let ur = model.u_set.coord_interval(l)?;
        let uzr = uz.coord_interval(l)?;
        let nh = bounds.h[l].neg();
        hi[l] = ur.hi / umax - nh.hi - uzr.hi;
        lo[l] = ur.lo / umax - nh.lo - uzr.lo;
        if !(lo[l] < -SET_TOL && hi[l] > SET_TOL) {
            return Ok(Err(DesignFailure::Tightening {
                set: "V".into(),
                reason: format!("input margin exhausted on input {l} (range [{:.4}, {:.4}])", lo[l], hi[l]),
            }));
        }
    }
    let v = HPolytope::from_bounds(&lo, &hi)?;
    // The box U is required for the interval certificate above.
    if model.u_set.as_box().is_none() {
        return Err(GeometryError::Unsupported.into());
    }
    Ok(Ok((xhat, v, uz)))
}

/// Independent interval check of the input certificate.
pub fn input_certificate_holds(model: &SubsystemModel, c: &TubeController) -> Result<bool, SynthError> {
    for l in 0..model.m() {
        let s = c.bounds.h[l]
            .neg()
            .add(&c.v.coord_interval(l)?)
            .add(&c.uz.coord_interval(l)?);
        let u = c.bounds.g_inv.mul(&s);
        let ur = model.u_set.coord_interval(l)?;
        if u.lo < ur.lo - 1e-9 || u.hi > ur.hi + 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Maximal output-admissible set of `x⁺ = Φx` inside `{x ∈ X̂ : Kx ∈ V}`.
pub fn terminal_set(phi: &DMatrix<f64>, k: &DMatrix<f64>, xhat: &HPolytope, v: &HPolytope) -> Result<HPolytope, SynthError> {
    let n = phi.nrows();
    let rows = xhat.num_halfspaces() + v.num_halfspaces();
    let mut h = DMatrix::zeros(rows, n);
    h.rows_mut(0, xhat.num_halfspaces()).copy_from(xhat.normals());
    h.rows_mut(xhat.num_halfspaces(), v.num_halfspaces())
        .copy_from(&(v.normals() * k));
    let mut hb = DVector::zeros(rows);
    hb.rows_mut(0, xhat.num_halfspaces()).copy_from(xhat.offsets());
    hb.rows_mut(xhat.num_halfspaces(), v.num_halfspaces())
        .copy_from(v.offsets());

    let mut set = HPolytope::from_halfspaces(h.clone(), hb.clone())?;
    let mut power = phi.clone();
    for _ in 0..500 {
        let cand = &h * &power;
        let mut add_a: Vec<DVector<f64>> = Vec::new();
        let mut add_b: Vec<f64> = Vec::new();
        for r in 0..cand.nrows() {
            let row: DVector<f64> = cand.row(r).transpose();
            if row.amax() < 1e-14 {
                continue;
            }
            let s = set.support_value(&row)?;
            if s > hb[r] + 1e-10 {
                add_a.push(row);
                add_b.push(hb[r]);
            }
        }
        if add_a.is_empty() {
            return Ok(set);
        }
        let mut na = DMatrix::zeros(add_a.len(), n);
        for (i, r) in add_a.iter().enumerate() {
            na.set_row(i, &r.transpose());
        }
        set = set
            .intersect_halfspaces(&na, &DVector::from_vec(add_b))?
            .ok_or(GeometryError::Empty)?;
        power = phi * &power;
    }
    Err(GeometryError::Unbounded.into())
}

/// Full decentralized design for one subsystem.
pub fn design_controller(
    model: &SubsystemModel,
    parent_sets: &BTreeMap<Id, HPolytope>,
    opts: &DesignOptions,
) -> Result<DesignOutcome, SynthError> {
    let n = model.n();
    if opts.feedback == Feedback::Output && !model.matched.is_unit() {
        return Err(SynthError::OutputFeedbackNonlinear);
    }
    let bounds = matched_bounds(model, parent_sets, opts)?;

    // Step III: coupling disturbance and its inflated neighbourhood.
    let w = coupling_set(model, parent_sets)?;
    let ball = HPolytope::symmetric_box(&vec![opts.omega; n])?;
    let w_ball = w.minkowski_sum(&ball)?;
    let zbar0 = w_ball.scale(1.0 + opts.zbar_inflation)?;
    if !model.x_set.contains(&zbar0)? {
        return Ok(DesignOutcome::Infeasible(DesignFailure::StepIii {
            reason: "W ⊕ B_ω is not contained in X".into(),
        }));
    }

    // Step IV: auxiliary law and tube.
    let lqr = lqr::dlqr(&model.a, &model.b, &opts.q, &opts.r)?;
    let k = lqr.k.clone();
    let phi = &model.a + &model.b * &k;
    let w_is_zero = w.abs_bounds()?.amax() == 0.0;
    let (z, terms, alpha) = if w_is_zero && opts.feedback == Feedback::State {
        (HPolytope::origin(n), 0, 0.0)
    } else {
        let (w_design, w_true) = match opts.feedback {
            Feedback::State => (zbar0.clone(), w_ball.clone()),
            Feedback::Output => {
                let o = &model.o_set;
                let bko = o.linear_map(&(&model.b * &k))?;
                let extra = bko.minkowski_sum(&o.scale(2.0)?)?;
                (zbar0.minkowski_sum(&extra)?, w_ball.minkowski_sum(&extra)?)
            }
        };
        match tube_set(&phi, &w_design, &w_true, opts)? {
            Some(m) => (m.z, m.terms, m.alpha),
            None => {
                return Ok(DesignOutcome::Infeasible(DesignFailure::StepIv {
                    reason: "tube iteration did not converge".into(),
                }))
            }
        }
    };
    if !model.x_set.contains(&z)? {
        return Ok(DesignOutcome::Infeasible(DesignFailure::StepIv {
            reason: "tube cross-section Z is not contained in X".into(),
        }));
    }
    let z_tube = match opts.feedback {
        Feedback::State => z.clone(),
        Feedback::Output => match z.pontryagin_diff(&model.o_set)? {
            Some(t) if t.origin_interior() => t,
            _ => {
                return Ok(DesignOutcome::Infeasible(DesignFailure::StepIv {
                    reason: "Z ⊖ O is empty".into(),
                }))
            }
        },
    };

    // Step V: tightened constraints and terminal ingredients.
    let (xhat, v, uz) = match tighten_constraints(model, &z, &k, &bounds)? {
        Ok(t) => t,
        Err(f) => return Ok(DesignOutcome::Infeasible(f)),
    };
    let xf = terminal_set(&phi, &k, &xhat, &v)?;
    Ok(DesignOutcome::Feasible(Box::new(TubeController {
        id: model.id,
        k,
        z,
        z_tube,
        uz,
        xhat,
        v,
        xf,
        q: opts.q.clone(),
        r: opts.r.clone(),
        p: lqr.p,
        horizon: opts.horizon,
        w,
        zbar0,
        omega: opts.omega,
        bounds,
        feedback: opts.feedback,
        mrpi_terms: terms,
        mrpi_alpha: alpha,
    })))
}

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SynthError> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    if rows.iter().any(|x| x.len() != c) {
        return Err(SynthError::Artifact("ragged matrix".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(SynthError::Artifact("non-finite entry".into()));
    }
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

/// Serializable form of a designed controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerArtifact {
    pub id: Id,
    pub horizon: usize,
    pub omega: f64,
    pub feedback: Feedback,
    pub mrpi_terms: usize,
    pub mrpi_alpha: f64,
    pub bounds: MatchedBounds,
    pub k: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub z: SetSpec,
    pub z_tube: SetSpec,
    pub uz: SetSpec,
    pub xhat: SetSpec,
    pub v: SetSpec,
    pub xf: SetSpec,
    pub w: SetSpec,
    pub zbar0: SetSpec,
}

impl TubeController {
    pub fn to_artifact(&self) -> ControllerArtifact {
        ControllerArtifact {
            id: self.id,
            horizon: self.horizon,
            omega: self.omega,
            feedback: self.feedback,
            mrpi_terms: self.mrpi_terms,
            mrpi_alpha: self.mrpi_alpha,
            bounds: self.bounds.clone(),
            k: mat_rows(&self.k),
            q: mat_rows(&self.q),
            r: mat_rows(&self.r),
            p: mat_rows(&self.p),
            z: self.z.to_spec(),
            z_tube: self.z_tube.to_spec(),
            uz: self.uz.to_spec(),
            xhat: self.xhat.to_spec(),
            v: self.v.to_spec(),
            xf: self.xf.to_spec(),
            w: self.w.to_spec(),
            zbar0: self.zbar0.to_spec(),
        }
    }

    pub fn from_artifact(a: &ControllerArtifact) -> Result<Self, SynthError> {
        let k = rows_mat(&a.k)?;
        let q = rows_mat(&a.q)?;
        let r = rows_mat(&a.r)?;
        let p = rows_mat(&a.p)?;
        let n = k.ncols();
        let m = k.nrows();
        if q.shape() != (n, n) || p.shape() != (n, n) || r.shape() != (m, m) || a.horizon == 0 {
            return Err(SynthError::Artifact("matrix shapes disagree".into()));
        }
        let c = TubeController {
            id: a.id,
            k,
            z: a.z.build()?,
            z_tube: a.z_tube.build()?,
            uz: a.uz.build()?,
            xhat: a.xhat.build()?,
            v: a.v.build()?,
            xf: a.xf.build()?,
            q,
            r,
            p,
            horizon: a.horizon,
            w: a.w.build()?,
            zbar0: a.zbar0.build()?,
            omega: a.omega,
            bounds: a.bounds.clone(),
            feedback: a.feedback,
            mrpi_terms: a.mrpi_terms,
            mrpi_alpha: a.mrpi_alpha,
        };
        for (name, s, d) in [
            ("z", &c.z, n),
            ("z_tube", &c.z_tube, n),
            ("xhat", &c.xhat, n),
            ("xf", &c.xf, n),
            ("w", &c.w, n),
            ("zbar0", &c.zbar0, n),
            ("uz", &c.uz, m),
            ("v", &c.v, m),
        ] {
            if s.dim() != d {
                return Err(SynthError::Artifact(format!("set {name} has dimension {}", s.dim())));
            }
        }
        if c.bounds.h.len() != m {
            return Err(SynthError::Artifact("drift bounds do not match input count".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::MatchedMap;

    fn scalar(a: f64) -> SubsystemModel {
        SubsystemModel {
            id: 1,
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, 1.0),
            matched: MatchedMap::Unit,
            coupling: DMatrix::zeros(1, 0),
            exogenous: None,
            x_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
            u_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
            o_set: HPolytope::symmetric_box(&[0.01]).unwrap(),
            parents: vec![],
            children: vec![],
            psi_layout: vec![],
        }
    }

    #[test]
    fn no_disturbance_no_tube() {
        let m = scalar(0.5);
        let opts = DesignOptions::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 5);
        let c = design_controller(&m, &BTreeMap::new(), &opts).unwrap().controller().unwrap();
        assert_eq!(c.z.abs_bounds().unwrap()[0], 0.0);
        assert_eq!(c.xhat.coord_interval(0).unwrap(), Interval::new(-1.0, 1.0));
        assert_eq!(c.v.coord_interval(0).unwrap(), Interval::new(-1.0, 1.0));
    }

    #[test]
    fn grid_covers_corners() {
        let pts = grid_points(&[Interval::new(-1.0, 1.0), Interval::new(0.0, 2.0)], 9);
        assert_eq!(pts.len(), 9);
        assert!(pts.contains(&vec![-1.0, 0.0]) && pts.contains(&vec![1.0, 2.0]));
    }

    #[test]
    fn artifact_round_trip() {
        let m = scalar(0.9);
        let opts = DesignOptions::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 5);
        let c = design_controller(&m, &BTreeMap::new(), &opts).unwrap().controller().unwrap();
        let text = toml::to_string(&c.to_artifact()).unwrap();
        let back: ControllerArtifact = toml::from_str(&text).unwrap();
        let c2 = TubeController::from_artifact(&back).unwrap();
        assert_eq!(c2.k, c.k);
        assert_eq!(c2.xf.offsets(), c.xf.offsets());
    }
}
