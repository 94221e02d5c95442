//! Convex sets used by the design and runtime layers.
//!
//! Every set is stored in halfspace form `{x : A x <= b}`. Sets built from
//! boxes or zonotopes additionally remember their generator form, which makes
//! Minkowski sums and support queries exact and cheap. Sets loaded from raw
//! halfspaces fall back to LP-based support queries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpError, LpOutcome};

/// Absolute tolerance on support values for all set comparisons.
pub const SET_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("set is empty")]
    Empty,
    #[error("negative half-width {0}")]
    NegativeHalfWidth(f64),
    #[error("non-finite set data")]
    NonFinite,
    #[error("operation needs generator form; general H-polytopes are not supported here")]
    Unsupported,
    #[error("set is unbounded")]
    Unbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Closed real interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn symmetric(r: f64) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn hull(&self, v: f64) -> Self {
        Interval::new(self.lo.min(v), self.hi.max(v))
    }

    pub fn add(&self, o: &Interval) -> Self {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn neg(&self) -> Self {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, o: &Interval) -> Self {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Interval::new(
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn scale(&self, f: f64) -> Self {
        if f >= 0.0 {
            Interval::new(self.lo * f, self.hi * f)
        } else {
            Interval::new(self.hi * f, self.lo * f)
        }
    }

    /// Widens the interval about its midpoint by `1 + factor`.
    pub fn inflate(&self, factor: f64) -> Self {
        let m = self.mid();
        let r = 0.5 * self.width() * (1.0 + factor);
        Interval::new(m - r, m + r)
    }
}

/// Result of a support-function query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Bounded(f64),
    Unbounded,
}

impl Support {
    pub fn value(self) -> Option<f64> {
        match self {
            Support::Bounded(v) => Some(v),
            Support::Unbounded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Box {
        center: DVector<f64>,
        half: DVector<f64>,
    },
    Zonotope {
        center: DVector<f64>,
        generators: DMatrix<f64>,
    },
    General,
}

/// Convex polytope `{x : A x <= b}` with optional generator form.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    shape: Shape,
}

fn check_finite<'a>(vals: impl IntoIterator<Item = &'a f64>) -> Result<(), GeometryError> {
    if vals.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite)
    }
}

impl HPolytope {
    /// General polytope from halfspaces; emptiness is rejected.
    pub fn from_halfspaces(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, GeometryError> {
        if a.nrows() != b.len() {
            return Err(GeometryError::Dimension {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        check_finite(a.iter().chain(b.iter()))?;
        if !halfspaces_feasible(&a, &b)? {
            return Err(GeometryError::Empty);
        }
        Ok(HPolytope {
            a,
            b,
            shape: Shape::General,
        })
    }

    pub fn boxed(center: DVector<f64>, half: DVector<f64>) -> Result<Self, GeometryError> {
        if center.len() != half.len() {
            return Err(GeometryError::Dimension {
                expected: center.len(),
                got: half.len(),
            });
        }
        check_finite(center.iter().chain(half.iter()))?;
        if let Some(&h) = half.iter().find(|h| **h < 0.0) {
            return Err(GeometryError::NegativeHalfWidth(h));
        }
        let n = center.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = center[i] + half[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -(center[i] - half[i]);
        }
        Ok(HPolytope {
            a,
            b,
            shape: Shape::Box { center, half },
        })
    }

    pub fn symmetric_box(half: &[f64]) -> Result<Self, GeometryError> {
        Self::boxed(DVector::zeros(half.len()), DVector::from_column_slice(half))
    }

    pub fn from_bounds(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self, GeometryError> {
        if lo.iter().zip(hi.iter()).any(|(l, h)| *l > *h + SET_TOL) {
            return Err(GeometryError::Empty);
        }
        let center = (lo + hi) * 0.5;
        let half = (hi - lo).map(|v| 0.5 * v.max(0.0));
        Self::boxed(center, half)
    }

    pub fn origin(n: usize) -> Self {
        Self::boxed(DVector::zeros(n), DVector::zeros(n)).expect("origin box")
    }

    /// Zonotope `c + G [-1,1]^g` in halfspace form.
    pub fn zonotope(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self, GeometryError> {
        if generators.nrows() != center.len() {
            return Err(GeometryError::Dimension {
                expected: center.len(),
                got: generators.nrows(),
            });
        }
        check_finite(center.iter().chain(generators.iter()))?;
        let generators = compact_generators(&generators);
        let (a, b) = zonotope_halfspaces(&center, &generators);
        Ok(HPolytope {
            a,
            b,
            shape: Shape::Zonotope { center, generators },
        })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn num_halfspaces(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_general(&self) -> bool {
        matches!(self.shape, Shape::General)
    }

    /// Center and half-widths if this set is an axis-aligned box.
    pub fn as_box(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match &self.shape {
            Shape::Box { center, half } => Some((center, half)),
            _ => None,
        }
    }

    /// Center and generator matrix when a generator form is known.
    pub fn generator_form(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match &self.shape {
            Shape::Box { center, half } => {
                let g = DMatrix::from_diagonal(half);
                Some((center.clone(), compact_generators(&g)))
            }
            Shape::Zonotope { center, generators } => Some((center.clone(), generators.clone())),
            Shape::General => None,
        }
    }

    pub fn support(&self, d: &DVector<f64>) -> Result<Support, GeometryError> {
        if d.len() != self.dim() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: d.len(),
            });
        }
        match &self.shape {
            Shape::Box { center, half } => Ok(Support::Bounded(
                center.dot(d) + half.iter().zip(d.iter()).map(|(h, v)| h * v.abs()).sum::<f64>(),
            )),
            Shape::Zonotope { center, generators } => {
                let s: f64 = (generators.transpose() * d).iter().map(|v| v.abs()).sum();
                Ok(Support::Bounded(center.dot(d) + s))
            }
            Shape::General => lp_support(&self.a, &self.b, d),
        }
    }

    /// Support value, failing if unbounded.
    pub fn support_value(&self, d: &DVector<f64>) -> Result<f64, GeometryError> {
        self.support(d)?.value().ok_or(GeometryError::Unbounded)
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (&self.a * x - &self.b).iter().all(|v| *v <= tol)
    }

    /// Largest halfspace violation of `x` (negative when strictly inside).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `inner ⊆ self` checked facet by facet through support values.
    pub fn contains(&self, inner: &HPolytope) -> Result<bool, GeometryError> {
        if inner.dim() != self.dim() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: inner.dim(),
            });
        }
        for r in 0..self.a.nrows() {
            let n = self.a.row(r).transpose();
            match inner.support(&n)? {
                Support::Unbounded => return Ok(false),
                Support::Bounded(h) => {
                    if h > self.b[r] + SET_TOL {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// `f·P` for `f >= 0`.
    pub fn scale(&self, f: f64) -> Result<Self, GeometryError> {
        if !(f.is_finite() && f >= 0.0) {
            return Err(GeometryError::NonFinite);
        }
        match &self.shape {
            Shape::Box { center, half } => Self::boxed(center * f, half * f),
            Shape::Zonotope { center, generators } => Self::zonotope(center * f, generators * f),
            Shape::General => {
                if f == 0.0 {
                    // The origin is the only point of 0·P for nonempty P.
                    return Ok(Self::origin(self.dim()));
                }
                Self::from_halfspaces(self.a.clone(), &self.b * f)
            }
        }
    }

    /// Tightest axis-aligned box containing the set.
    pub fn bounding_box(&self) -> Result<Self, GeometryError> {
        if let Shape::Box { .. } = self.shape {
            return Ok(self.clone());
        }
        self.linear_image_box(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Axis-aligned box enclosing `M·P`.
    pub fn linear_image_box(&self, m: &DMatrix<f64>) -> Result<Self, GeometryError> {
        if m.ncols() != self.dim() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: m.ncols(),
            });
        }
        let k = m.nrows();
        let mut lo = DVector::zeros(k);
        let mut hi = DVector::zeros(k);
        for r in 0..k {
            let row = m.row(r).transpose();
            hi[r] = self.support_value(&row)?;
            lo[r] = -self.support_value(&(-row))?;
        }
        Self::from_bounds(&lo, &hi)
    }

    /// Exact linear image `M·P` of a set with generator form.
    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Self, GeometryError> {
        let (c, g) = self.generator_form().ok_or(GeometryError::Unsupported)?;
        if m.ncols() != c.len() {
            return Err(GeometryError::Dimension {
                expected: c.len(),
                got: m.ncols(),
            });
        }
        Self::zonotope(m * c, m * g)
    }

    /// Exact Minkowski sum; both operands need generator form.
    pub fn minkowski_sum(&self, other: &HPolytope) -> Result<Self, GeometryError> {
        if other.dim() != self.dim() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if let (Shape::Box { center: c1, half: h1 }, Shape::Box { center: c2, half: h2 }) =
            (&self.shape, &other.shape)
        {
            return Self::boxed(c1 + c2, h1 + h2);
        }
        let (c1, g1) = self.generator_form().ok_or(GeometryError::Unsupported)?;
        let (c2, g2) = other.generator_form().ok_or(GeometryError::Unsupported)?;
        let n = self.dim();
        let mut g = DMatrix::zeros(n, g1.ncols() + g2.ncols());
        g.columns_mut(0, g1.ncols()).copy_from(&g1);
        g.columns_mut(g1.ncols(), g2.ncols()).copy_from(&g2);
        Self::zonotope(c1 + c2, g)
    }

    /// Pontryagin difference `self ⊖ other`; `Ok(None)` when empty.
    pub fn pontryagin_diff(&self, other: &HPolytope) -> Result<Option<Self>, GeometryError> {
        if other.dim() != self.dim() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let mut b = self.b.clone();
        for r in 0..self.a.nrows() {
            let n = self.a.row(r).transpose();
            b[r] -= other.support_value(&n)?;
        }
        if let Shape::Box { .. } = self.shape {
            let n = self.dim();
            let hi = DVector::from_fn(n, |i, _| b[2 * i]);
            let lo = DVector::from_fn(n, |i, _| -b[2 * i + 1]);
            if lo.iter().zip(hi.iter()).any(|(l, h)| *l > *h + SET_TOL) {
                return Ok(None);
            }
            return Ok(Some(Self::from_bounds(&lo, &hi.zip_map(&lo, f64::max))?));
        }
        if !halfspaces_feasible(&self.a, &b)? {
            return Ok(None);
        }
        Ok(Some(HPolytope {
            a: self.a.clone(),
            b,
            shape: Shape::General,
        }))
    }

    /// Intersection with extra halfspaces (result is a general polytope).
    pub fn intersect_halfspaces(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Result<Option<Self>, GeometryError> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(GeometryError::Dimension {
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        let rows = self.a.nrows() + a.nrows();
        let mut na = DMatrix::zeros(rows, self.dim());
        na.rows_mut(0, self.a.nrows()).copy_from(&self.a);
        na.rows_mut(self.a.nrows(), a.nrows()).copy_from(a);
        let mut nb = DVector::zeros(rows);
        nb.rows_mut(0, self.b.len()).copy_from(&self.b);
        nb.rows_mut(self.b.len(), b.len()).copy_from(b);
        if !halfspaces_feasible(&na, &nb)? {
            return Ok(None);
        }
        Ok(Some(HPolytope {
            a: na,
            b: nb,
            shape: Shape::General,
        }))
    }

    /// Drops the generator form, keeping only the halfspaces.
    pub fn into_general(self) -> Self {
        HPolytope {
            a: self.a,
            b: self.b,
            shape: Shape::General,
        }
    }

    /// Whether the origin lies strictly inside every halfspace.
    pub fn origin_interior(&self) -> bool {
        self.b.iter().all(|v| *v > SET_TOL)
    }

    /// Largest absolute coordinate over the set, per axis.
    pub fn abs_bounds(&self) -> Result<DVector<f64>, GeometryError> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let hi = self.support_value(&e)?;
            let lo = self.support_value(&(-e))?;
            out[i] = hi.max(lo).max(0.0);
        }
        Ok(out)
    }

    /// Interval spanned by coordinate `i`.
    pub fn coord_interval(&self, i: usize) -> Result<Interval, GeometryError> {
        let n = self.dim();
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let hi = self.support_value(&e)?;
        let lo = -self.support_value(&(-e))?;
        Ok(Interval::new(lo, hi))
    }

    /// Serializable description of this set.
    pub fn to_spec(&self) -> SetSpec {
        match &self.shape {
            Shape::Box { center, half } => SetSpec::Box {
                center: center.iter().copied().collect(),
                half_widths: half.iter().copied().collect(),
            },
            Shape::Zonotope { center, generators } => SetSpec::Zonotope {
                center: center.iter().copied().collect(),
                generators: generators
                    .column_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect(),
            },
            Shape::General => SetSpec::Hpoly {
                normals: self
                    .a
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                offsets: self.b.iter().copied().collect(),
            },
        }
    }
}

/// Set description used in configuration and artifact files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SetSpec {
    Box {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
    Hpoly {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
    Zonotope {
        center: Vec<f64>,
        generators: Vec<Vec<f64>>,
    },
}

impl SetSpec {
    pub fn build(&self) -> Result<HPolytope, GeometryError> {
        match self {
            SetSpec::Box {
                center,
                half_widths,
            } => HPolytope::boxed(
                DVector::from_column_slice(center),
                DVector::from_column_slice(half_widths),
            ),
            SetSpec::Hpoly { normals, offsets } => {
                let n = normals.first().map(|r| r.len()).unwrap_or(0);
                if n == 0 || normals.len() != offsets.len() {
                    return Err(GeometryError::Dimension {
                        expected: normals.len(),
                        got: offsets.len(),
                    });
                }
                if let Some(r) = normals.iter().find(|r| r.len() != n) {
                    return Err(GeometryError::Dimension {
                        expected: n,
                        got: r.len(),
                    });
                }
                let flat: Vec<f64> = normals.iter().flatten().copied().collect();
                HPolytope::from_halfspaces(
                    DMatrix::from_row_slice(normals.len(), n, &flat),
                    DVector::from_column_slice(offsets),
                )
            }
            SetSpec::Zonotope {
                center,
                generators,
            } => {
                let n = center.len();
                if let Some(g) = generators.iter().find(|g| g.len() != n) {
                    return Err(GeometryError::Dimension {
                        expected: n,
                        got: g.len(),
                    });
                }
                let flat: Vec<f64> = generators.iter().flatten().copied().collect();
                HPolytope::zonotope(
                    DVector::from_column_slice(center),
                    DMatrix::from_column_slice(n, generators.len(), &flat),
                )
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SetSpec::Box { center, .. } | SetSpec::Zonotope { center, .. } => center.len(),
            SetSpec::Hpoly { normals, .. } => normals.first().map(|r| r.len()).unwrap_or(0),
        }
    }
}

/// Parses a set description from TOML text.
pub fn parse_set_spec(text: &str) -> Result<HPolytope, SetParseError> {
    let spec: SetSpec = toml::from_str(text)?;
    Ok(spec.build()?)
}

#[derive(Debug, Error)]
pub enum SetParseError {
    #[error("malformed set description: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn lp_support(a: &DMatrix<f64>, b: &DVector<f64>, d: &DVector<f64>) -> Result<Support, GeometryError> {
    // Dual: min b'y s.t. A'y = d, y >= 0.
    let at = a.transpose();
    match lp::solve_standard(&at, d.as_slice(), b.as_slice())? {
        LpOutcome::Optimal { value, .. } => Ok(Support::Bounded(value)),
        LpOutcome::Infeasible => Ok(Support::Unbounded),
        LpOutcome::Unbounded => Err(GeometryError::Empty),
    }
}

/// Farkas test: `{A x <= b}` is empty iff some y >= 0 has A'y = 0, b'y < 0.
pub fn halfspaces_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool, GeometryError> {
    let (m, n) = a.shape();
    if m == 0 {
        return Ok(true);
    }
    let mut eq = DMatrix::zeros(n + 1, m);
    eq.rows_mut(0, n).copy_from(&a.transpose());
    eq.row_mut(n).fill(1.0);
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    match lp::solve_standard(&eq, &rhs, b.as_slice())? {
        LpOutcome::Optimal { value, .. } => Ok(value >= -1e-10 * scale),
        LpOutcome::Infeasible => Ok(true),
        LpOutcome::Unbounded => Ok(false),
    }
}

/// Removes negligible generators and merges parallel ones.
pub fn compact_generators(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let scale = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tiny = 1e-14 * scale.max(1e-300);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for c in g.column_iter() {
        let v: DVector<f64> = c.into_owned();
        let norm = v.norm();
        if norm <= tiny || norm == 0.0 {
            continue;
        }
        let mut merged = false;
        for k in kept.iter_mut() {
            let kn = k.norm();
            let cos = k.dot(&v) / (kn * norm);
            if (cos.abs() - 1.0).abs() < 1e-13 {
                if cos > 0.0 {
                    *k += &v;
                } else {
                    *k -= &v;
                }
                merged = true;
                break;
            }
        }
        if !merged {
            kept.push(v);
        }
    }
    let mut out = DMatrix::zeros(n, kept.len());
    for (j, v) in kept.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

/// Box-reduces all but the `keep` most significant generators.
pub fn reduce_generators(g: &DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let n = g.nrows();
    if g.ncols() <= keep + n {
        return g.clone();
    }
    let mut idx: Vec<usize> = (0..g.ncols()).collect();
    let score = |j: usize| {
        let c = g.column(j);
        c.iter().map(|v| v.abs()).sum::<f64>() - c.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    };
    idx.sort_by(|&x, &y| score(y).partial_cmp(&score(x)).unwrap().then(x.cmp(&y)));
    let mut out = DMatrix::zeros(n, keep + n);
    for (j, &src) in idx.iter().take(keep).enumerate() {
        out.set_column(j, &g.column(src));
    }
    for &src in idx.iter().skip(keep) {
        for i in 0..n {
            out[(i, keep + i)] += g[(i, src)].abs();
        }
    }
    compact_generators(&out)
}

/// Generalized cross product of the n-1 columns of `m` (n x (n-1)).
fn cross_normal(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    if n == 1 {
        return DVector::from_element(1, 1.0);
    }
    let mut out = DVector::zeros(n);
    for k in 0..n {
        let minor = m.clone().remove_row(k);
        let det = minor.determinant();
        out[k] = if k % 2 == 0 { det } else { -det };
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Halfspace representation of a zonotope by enumerating (n-1)-subsets of
/// generator directions. Rank-deficient zonotopes are handled by adding the
/// orthogonal complement of the generator span as zero-length directions.
fn zonotope_halfspaces(c: &DVector<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = c.len();
    let mut dirs: Vec<DVector<f64>> = g.column_iter().map(|v| v.into_owned()).collect();
    let rank_dirs = complement_basis(g);
    dirs.extend(rank_dirs);
    let mut normals: Vec<DVector<f64>> = Vec::new();
    for subset in combinations(dirs.len(), n.saturating_sub(1)) {
        let mut m = DMatrix::zeros(n, n - 1);
        for (j, &s) in subset.iter().enumerate() {
            m.set_column(j, &dirs[s]);
        }
        let nv = cross_normal(&m);
        let norm = nv.norm();
        let scale: f64 = subset.iter().map(|&s| dirs[s].norm()).product::<f64>().max(1e-300);
        if norm <= 1e-10 * scale {
            continue;
        }
        let nv = nv / norm;
        if !normals.iter().any(|e| (e.dot(&nv).abs() - 1.0).abs() < 1e-12) {
            normals.push(nv);
        }
    }
    let mut a = DMatrix::zeros(2 * normals.len(), n);
    let mut b = DVector::zeros(2 * normals.len());
    for (r, nv) in normals.iter().enumerate() {
        let h: f64 = (g.transpose() * nv).iter().map(|v| v.abs()).sum();
        let cn = c.dot(nv);
        a.set_row(2 * r, &nv.transpose());
        b[2 * r] = cn + h;
        a.set_row(2 * r + 1, &(-nv).transpose());
        b[2 * r + 1] = -cn + h;
    }
    (a, b)
}

fn complement_basis(g: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = g.nrows();
    if g.ncols() == 0 {
        return (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
    }
    let gg = g * g.transpose();
    let eig = nalgebra::SymmetricEigen::new(gg);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut out = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    for i in order {
        if eig.eigenvalues[i] <= 1e-20 * top.max(1e-300) {
            out.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn combinations_enumerates_all() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(5, 3).len(), 10);
        assert_eq!(combinations(2, 3).len(), 0);
    }

    #[test]
    fn box_erosion() {
        let x = HPolytope::symmetric_box(&[3.0]).unwrap();
        let z = HPolytope::symmetric_box(&[0.5]).unwrap();
        let d = x.pontryagin_diff(&z).unwrap().unwrap();
        let (c, h) = d.as_box().unwrap();
        assert_eq!(c[0], 0.0);
        assert!((h[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn erosion_can_be_empty() {
        let x = HPolytope::symmetric_box(&[1.0, 1.0]).unwrap();
        let z = HPolytope::symmetric_box(&[2.0, 0.1]).unwrap();
        assert!(x.pontryagin_diff(&z).unwrap().is_none());
    }

    #[test]
    fn degenerate_zonotope_is_flat() {
        let z = HPolytope::zonotope(v(&[0.0, 0.0]), DMatrix::from_column_slice(2, 1, &[1.0, 1.0]))
            .unwrap();
        assert!(z.contains_point(&v(&[0.5, 0.5]), 1e-12));
        assert!(!z.contains_point(&v(&[0.5, 0.4]), 1e-9));
        assert!((z.support_value(&v(&[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn general_support_matches_box_support() {
        let b = HPolytope::boxed(v(&[1.0, -2.0]), v(&[0.5, 2.0])).unwrap();
        let g = b.clone().into_general();
        for d in [v(&[1.0, 0.3]), v(&[-0.2, 1.0]), v(&[-1.0, -1.0])] {
            let s1 = b.support_value(&d).unwrap();
            let s2 = g.support_value(&d).unwrap();
            assert!((s1 - s2).abs() < 1e-10, "{s1} vs {s2}");
        }
    }

    #[test]
    fn unbounded_direction_reported() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = HPolytope::from_halfspaces(a, v(&[1.0])).unwrap();
        assert_eq!(p.support(&v(&[0.0, 1.0])).unwrap(), Support::Unbounded);
        assert_eq!(p.support(&v(&[2.0, 0.0])).unwrap(), Support::Bounded(2.0));
    }

    #[test]
    fn empty_halfspaces_rejected() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(
            HPolytope::from_halfspaces(a, v(&[-1.0, -1.0])).unwrap_err(),
            GeometryError::Empty
        );
    }

    #[test]
    fn set_spec_round_trip() {
        let z = HPolytope::zonotope(
            v(&[0.1, 0.0]),
            DMatrix::from_column_slice(2, 2, &[1.0, 0.5, -0.2, 1.0]),
        )
        .unwrap();
        let spec = z.to_spec();
        let back = spec.build().unwrap();
        assert_eq!(back.offsets(), z.offsets());
        let text = toml::to_string(&spec).unwrap();
        let parsed = parse_set_spec(&text).unwrap();
        assert_eq!(parsed.offsets(), z.offsets());
    }
}
