//! Network of coupled subsystems.
//!
//! The control side is a non-overlapping decomposition: every state component
//! belongs to exactly one [`SubsystemModel`]. The diagnosis side may overlap:
//! a [`DiagSubsystemModel`] can also monitor components owned by parents, and
//! every such shared component has a global id `k` in the registry.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, HPolytope, Interval};

pub type Id = usize;
pub type StateMap = BTreeMap<Id, DVector<f64>>;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("unknown subsystem {0}")]
    UnknownId(Id),
    #[error("missing input for active subsystem {0}")]
    MissingInput(Id),
    #[error("missing state for subsystem {0}")]
    MissingState(Id),
    #[error("non-finite state in subsystem {0}")]
    NonFinite(Id),
    #[error("subsystem {id}: {reason}")]
    Structure { id: Id, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Matched nonlinearity `B [g(x, ψ) u + h(x, ψ)]`, referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatchedMap {
    /// `g = 1`, `h = 0`.
    Unit,
    /// `g = 1 / (g0 + g2 x1²)`, `h = -alpha_bar (x1² - 1) x2`.
    VdpoActuator { alpha_bar: f64, g0: f64, g2: f64 },
}

impl MatchedMap {
    pub fn gain(&self, x: &DVector<f64>, _psi: &DVector<f64>) -> f64 {
        match self {
            MatchedMap::Unit => 1.0,
            MatchedMap::VdpoActuator { g0, g2, .. } => 1.0 / (g0 + g2 * x[0] * x[0]),
        }
    }

    pub fn drift(&self, x: &DVector<f64>, _psi: &DVector<f64>, m: usize) -> DVector<f64> {
        match self {
            MatchedMap::Unit => DVector::zeros(m),
            MatchedMap::VdpoActuator { alpha_bar, .. } => {
                DVector::from_element(m, -alpha_bar * (x[0] * x[0] - 1.0) * x[1])
            }
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, MatchedMap::Unit)
    }

    /// Exact range of `g⁻¹` and of each drift component over a box, when a
    /// closed form is available.
    pub fn closed_form_bounds(&self, x_box: &[Interval], m: usize) -> Option<(Interval, Vec<Interval>)> {
        match self {
            MatchedMap::Unit => Some((Interval::point(1.0), vec![Interval::point(0.0); m])),
            MatchedMap::VdpoActuator { alpha_bar, g0, g2 } => {
                let x1 = x_box.first()?;
                let x2 = x_box.get(1)?;
                let sq = square_range(x1);
                let ginv = Interval::new(g0 + g2 * sq.lo, g0 + g2 * sq.hi);
                let h = Interval::new(sq.lo - 1.0, sq.hi - 1.0).mul(x2).scale(-alpha_bar);
                Some((ginv, vec![h; m]))
            }
        }
    }
}

fn square_range(x: &Interval) -> Interval {
    let a = x.lo * x.lo;
    let b = x.hi * x.hi;
    if x.lo <= 0.0 && x.hi >= 0.0 {
        Interval::new(0.0, a.max(b))
    } else {
        Interval::new(a.min(b), a.max(b))
    }
}

/// Control-side subsystem model (already discretized).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub id: Id,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub matched: MatchedMap,
    /// Linear coupling `w(ψ) = C ψ`, `n × p`.
    pub coupling: DMatrix<f64>,
    /// Column multiplying the known exogenous signal of this subsystem.
    pub exogenous: Option<DVector<f64>>,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    /// Measurement-error set on the subsystem's own components.
    pub o_set: HPolytope,
    pub parents: Vec<Id>,
    pub children: Vec<Id>,
    pub psi_layout: Vec<(Id, usize)>,
}

impl SubsystemModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.psi_layout.len()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let err = |reason: String| NetError::Structure { id: self.id, reason };
        let n = self.n();
        if self.a.ncols() != n || self.b.nrows() != n {
            return Err(err("A/B dimensions disagree".into()));
        }
        if self.coupling.nrows() != n || self.coupling.ncols() != self.p() {
            return Err(err("coupling matrix does not match psi layout".into()));
        }
        if let Some(e) = &self.exogenous {
            if e.len() != n {
                return Err(err("exogenous column has wrong length".into()));
            }
        }
        if self.x_set.dim() != n || self.o_set.dim() != n || self.u_set.dim() != self.m() {
            return Err(err("constraint set dimensions disagree".into()));
        }
        for s in [&self.x_set, &self.u_set, &self.o_set] {
            if !s.origin_interior() {
                return Err(err("constraint sets must contain the origin in their interior".into()));
            }
        }
        if self.parents.contains(&self.id) {
            return Err(err("a subsystem cannot be its own parent".into()));
        }
        for (j, _) in &self.psi_layout {
            if !self.parents.contains(j) {
                return Err(err(format!("psi layout references non-parent {j}")));
            }
        }
        if !stabilizable(&self.a, &self.b) {
            return Err(err("(A, B) is not stabilizable".into()));
        }
        Ok(())
    }
}

/// PBH test on the eigenvalues with modulus at least one.
pub fn stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    use nalgebra::Complex;
    let n = a.nrows();
    let eig = a.complex_eigenvalues();
    let scale = 1.0 + a.amax() + b.amax();
    for lam in eig.iter() {
        if lam.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = Complex::new(a[(r, c)], 0.0);
            }
            m[(r, r)] -= lam;
            for c in 0..b.ncols() {
                m[(r, n + c)] = Complex::new(b[(r, c)], 0.0);
            }
        }
        let gram = &m * m.adjoint();
        let ev = gram.symmetric_eigenvalues();
        let min = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
        if min <= 1e-18 * scale * scale {
            return false;
        }
    }
    true
}

/// One component of an extended (diagnosis-side) state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagComponent {
    pub owner: Id,
    pub comp: usize,
    pub shared: Option<usize>,
}

/// Where a ψ entry is read from when the detector evaluates `g̃`, `h̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiSource {
    Measured(usize),
    Transmitted(usize),
}

/// Linear prediction model of one extended component.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    /// Coefficients on the extended measurement `y`.
    pub a_tilde: DVector<f64>,
    /// Coefficients on `g̃ u + h̃` (zero for rows owned elsewhere).
    pub b_tilde: DVector<f64>,
    /// Coefficient on the known exogenous signal of the owner.
    pub e_coef: f64,
    /// Absolute gains of the unknown coupling on the transmitted `z` entries.
    pub z_gain: DVector<f64>,
    /// Bound on row terms that are neither measured nor transmitted.
    pub w_const: f64,
}

/// Diagnosis-side extended subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagSubsystemModel {
    pub id: Id,
    pub layout: Vec<DiagComponent>,
    pub rows: Vec<DiagRow>,
    /// Parent components transmitted as `z` (ψ without the monitored ones).
    pub z_layout: Vec<(Id, usize)>,
    pub psi_sources: Vec<PsiSource>,
    pub own_positions: Vec<usize>,
    pub rho_bar: DVector<f64>,
    pub theta_bar: DVector<f64>,
    /// Absolute bounds of each extended component (from the owners' X).
    pub x_tilde_bounds: Vec<Interval>,
}

impl DiagSubsystemModel {
    pub fn n_tilde(&self) -> usize {
        self.layout.len()
    }

    pub fn position_of(&self, owner: Id, comp: usize) -> Option<usize> {
        self.layout
            .iter()
            .position(|c| c.owner == owner && c.comp == comp)
    }

    /// Own state and ψ as seen by the detector.
    pub fn split_measurement(&self, y: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let x = DVector::from_iterator(self.own_positions.len(), self.own_positions.iter().map(|&p| y[p]));
        let psi = DVector::from_iterator(
            self.psi_sources.len(),
            self.psi_sources.iter().map(|s| match *s {
                PsiSource::Measured(p) => y[p],
                PsiSource::Transmitted(q) => z[q],
            }),
        );
        (x, psi)
    }
}

/// Per-subsystem pair of models.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub model: SubsystemModel,
    pub diag: DiagSubsystemModel,
}

/// Piecewise-constant exogenous signals, one scalar per subsystem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedule {
    /// `(step, subsystem, increment)`, applied from `step` on.
    pub steps: Vec<(usize, Id, f64)>,
}

impl LoadSchedule {
    pub fn value(&self, id: Id, t: usize) -> f64 {
        self.steps
            .iter()
            .filter(|(s, i, _)| *i == id && *s <= t)
            .map(|(_, _, d)| d)
            .sum()
    }

    /// Largest magnitude the signal of `id` ever takes.
    pub fn max_abs(&self, id: Id) -> f64 {
        let mut mine: Vec<(usize, f64)> = self
            .steps
            .iter()
            .filter(|(_, i, _)| *i == id)
            .map(|(s, _, d)| (*s, *d))
            .collect();
        mine.sort_by_key(|(s, _)| *s);
        let mut acc = 0.0f64;
        let mut best = 0.0f64;
        for (_, d) in mine {
            acc += d;
            best = best.max(acc.abs());
        }
        best
    }

    /// Steps at which the signal of `id` changes.
    pub fn change_points(&self, id: Id) -> BTreeSet<usize> {
        self.steps
            .iter()
            .filter(|(_, i, _)| *i == id)
            .map(|(s, _, _)| *s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Detection,
    Unplug,
    PlugIn,
    Retune,
    Rejected,
}

/// Entry of the reconfiguration/detection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub step: usize,
    pub time: f64,
    pub kind: EventKind,
    pub target: Id,
    pub affected: Vec<Id>,
    pub reason: String,
}

/// The dual-decomposed large-scale system.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: BTreeMap<Id, Node>,
    pub active: BTreeSet<Id>,
    /// Global shared-variable id → all members `(subsystem, layout position)`.
    pub shared_registry: BTreeMap<usize, Vec<(Id, usize)>>,
    /// Owner of each shared variable.
    pub shared_owner: BTreeMap<usize, (Id, usize)>,
    pub event_log: Vec<Event>,
    pub loads: LoadSchedule,
    /// Sampling time in seconds.
    pub ts: f64,
}

impl Network {
    pub fn ids(&self) -> impl Iterator<Item = Id> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node(&self, id: Id) -> Result<&Node, NetError> {
        self.nodes.get(&id).ok_or(NetError::UnknownId(id))
    }

    pub fn model(&self, id: Id) -> Result<&SubsystemModel, NetError> {
        Ok(&self.node(id)?.model)
    }

    pub fn is_active(&self, id: Id) -> bool {
        self.active.contains(&id)
    }

    /// Active members of `S^k`; empty when the owner is unplugged, since the
    /// variable then no longer evolves according to any healthy model.
    pub fn active_members(&self, k: usize) -> Vec<(Id, usize)> {
        let owner_active = self
            .shared_owner
            .get(&k)
            .map(|(o, _)| self.is_active(*o))
            .unwrap_or(false);
        if !owner_active {
            return Vec::new();
        }
        self.shared_registry
            .get(&k)
            .map(|v| v.iter().copied().filter(|(i, _)| self.is_active(*i)).collect())
            .unwrap_or_default()
    }

    /// Whether extended component `pos` of unit `i` is currently monitored.
    pub fn component_live(&self, i: Id, pos: usize) -> bool {
        match self.nodes.get(&i) {
            Some(node) => {
                let c = node.diag.layout[pos];
                self.is_active(c.owner)
            }
            None => false,
        }
    }

    pub fn log(&mut self, ev: Event) {
        self.event_log.push(ev);
    }

    /// Structural checks across the whole network.
    pub fn validate(&self) -> Result<(), NetError> {
        let mut seen = BTreeSet::new();
        for (id, node) in &self.nodes {
            if node.model.id != *id || node.diag.id != *id {
                return Err(NetError::Structure {
                    id: *id,
                    reason: "id mismatch".into(),
                });
            }
            node.model.validate()?;
            for c in 0..node.model.n() {
                if !seen.insert((*id, c)) {
                    return Err(NetError::Structure {
                        id: *id,
                        reason: "overlapping control decomposition".into(),
                    });
                }
            }
            for j in &node.model.parents {
                let pj = self.node(*j)?;
                if !pj.model.children.contains(id) {
                    return Err(NetError::Structure {
                        id: *id,
                        reason: format!("parent {j} does not list {id} as a child"),
                    });
                }
            }
            for (pos, c) in node.diag.layout.iter().enumerate() {
                if c.owner != *id && !node.model.parents.contains(&c.owner) {
                    return Err(NetError::Structure {
                        id: *id,
                        reason: format!("monitors a component of non-parent {}", c.owner),
                    });
                }
                match c.shared {
                    Some(k) => {
                        let ok = self
                            .shared_registry
                            .get(&k)
                            .map(|m| m.contains(&(*id, pos)))
                            .unwrap_or(false);
                        if !ok {
                            return Err(NetError::Structure {
                                id: *id,
                                reason: format!("shared variable {k} missing from registry"),
                            });
                        }
                    }
                    None => {
                        if c.owner != *id {
                            return Err(NetError::Structure {
                                id: *id,
                                reason: "foreign component without shared id".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Interconnection vector ψ of subsystem `i`; unplugged parents read as zero.
pub fn assemble_psi(net: &Network, i: Id, states: &StateMap) -> Result<DVector<f64>, NetError> {
    let model = net.model(i)?;
    let mut psi = DVector::zeros(model.p());
    for (idx, (j, c)) in model.psi_layout.iter().enumerate() {
        if net.is_active(*j) {
            let xj = states.get(j).ok_or(NetError::MissingState(*j))?;
            psi[idx] = xj[*c];
        }
    }
    Ok(psi)
}

/// How a fault modifies the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    AdditiveState,
    ActuatorOverride,
}

/// Fault function data.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultMap {
    /// Applied input replaced by a constant vector.
    Override(DVector<f64>),
    /// Parameter change: `φ = ΔA x + ΔB u + ΔC ψ + Δe d`.
    LinearDrift {
        da: DMatrix<f64>,
        db: DMatrix<f64>,
        dc: DMatrix<f64>,
        de: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub target: Id,
    pub onset: usize,
    /// First step at which the fault is repaired, if ever.
    pub until: Option<usize>,
    pub mode: FaultMode,
    pub map: FaultMap,
}

impl FaultSpec {
    pub fn active_at(&self, t: usize) -> bool {
        t >= self.onset && self.until.map(|u| t < u).unwrap_or(true)
    }

    /// Input actually applied by the actuator at step `t`.
    pub fn applied_input(&self, u_cmd: &DVector<f64>, t: usize) -> DVector<f64> {
        match (&self.map, self.active_at(t)) {
            (FaultMap::Override(v), true) => v.clone(),
            _ => u_cmd.clone(),
        }
    }

    /// Fault function `φ(t)`: deviation of the successor state from the
    /// healthy model for the same state, interconnection and command.
    pub fn phi(
        &self,
        model: &SubsystemModel,
        x: &DVector<f64>,
        psi: &DVector<f64>,
        u_cmd: &DVector<f64>,
        d: f64,
        t: usize,
    ) -> DVector<f64> {
        if !self.active_at(t) {
            return DVector::zeros(model.n());
        }
        match &self.map {
            FaultMap::Override(v) => {
                let g = model.matched.gain(x, psi);
                &model.b * ((v - u_cmd) * g)
            }
            FaultMap::LinearDrift { da, db, dc, de } => da * x + db * u_cmd + dc * psi + de * d,
        }
    }
}

/// Nominal one-step map of a single subsystem.
pub fn nominal_successor(
    model: &SubsystemModel,
    x: &DVector<f64>,
    psi: &DVector<f64>,
    u: &DVector<f64>,
    d: f64,
) -> DVector<f64> {
    let g = model.matched.gain(x, psi);
    let h = model.matched.drift(x, psi, model.m());
    let mut next = &model.a * x + &model.b * (u * g + h) + &model.coupling * psi;
    if let Some(e) = &model.exogenous {
        next.axpy(d, e, 1.0);
    }
    next
}

/// Successor states of all subsystems; unplugged ones stay frozen.
pub fn step_plant(
    net: &Network,
    states: &StateMap,
    inputs: &StateMap,
    faults: &[FaultSpec],
    t: usize,
) -> Result<StateMap, NetError> {
    let mut out = StateMap::new();
    for (&id, node) in &net.nodes {
        let x = states.get(&id).ok_or(NetError::MissingState(id))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(id));
        }
        if !net.is_active(id) {
            out.insert(id, x.clone());
            continue;
        }
        let u_cmd = inputs.get(&id).ok_or(NetError::MissingInput(id))?;
        let psi = assemble_psi(net, id, states)?;
        let d = net.loads.value(id, t);
        let mut u = u_cmd.clone();
        for f in faults.iter().filter(|f| f.target == id && f.mode == FaultMode::ActuatorOverride) {
            u = f.applied_input(&u, t);
        }
        let mut next = nominal_successor(&node.model, x, &psi, &u, d);
        for f in faults.iter().filter(|f| f.target == id && f.mode == FaultMode::AdditiveState) {
            next += f.phi(&node.model, x, &psi, u_cmd, d, t);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(id));
        }
        out.insert(id, next);
    }
    Ok(out)
}

/// Seeded counter-based measurement noise, uniform over each `O_i` box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed }
    }

    /// Draws `len` values in `[-bound_c, bound_c]`; depends only on
    /// (seed, step, id).
    pub fn draw(&self, step: usize, id: Id, bounds: &DVector<f64>) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id as u64);
        rng.set_word_pos(step as u128 * 64);
        DVector::from_iterator(
            bounds.len(),
            bounds.iter().map(|b| {
                let r: f64 = rng.gen_range(-1.0..=1.0);
                r * b
            }),
        )
    }
}

/// Extended measurements `y_i = x̃_i + ρ_i` for every subsystem.
pub fn measure(net: &Network, states: &StateMap, noise: &NoiseSource, step: usize) -> Result<StateMap, NetError> {
    let mut out = StateMap::new();
    for (&id, node) in &net.nodes {
        let diag = &node.diag;
        let rho = noise.draw(step, id, &diag.rho_bar);
        let mut y = DVector::zeros(diag.n_tilde());
        for (pos, c) in diag.layout.iter().enumerate() {
            let xo = states.get(&c.owner).ok_or(NetError::MissingState(c.owner))?;
            y[pos] = xo[c.comp] + rho[pos];
        }
        out.insert(id, y);
    }
    Ok(out)
}

/// Transmitted parent measurements `z_i` read from the parents' own outputs.
pub fn assemble_z(net: &Network, i: Id, outputs: &StateMap) -> Result<DVector<f64>, NetError> {
    let diag = &net.node(i)?.diag;
    let mut z = DVector::zeros(diag.z_layout.len());
    for (q, (j, c)) in diag.z_layout.iter().enumerate() {
        if !net.is_active(*j) {
            continue;
        }
        let pj = &net.node(*j)?.diag;
        let pos = pj.position_of(*j, *c).ok_or(NetError::Structure {
            id: *j,
            reason: format!("component {c} not measured by its owner"),
        })?;
        z[q] = outputs.get(j).ok_or(NetError::MissingState(*j))?[pos];
    }
    Ok(z)
}

/// Sharing specification used to build extended models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SharingSpec {
    /// Components owned by a parent that a unit additionally monitors.
    pub extra: BTreeMap<Id, Vec<(Id, usize)>>,
}

/// Assembles the network, the shared-variable registry, and every extended
/// model from control-side models.
pub fn build_network(
    models: Vec<SubsystemModel>,
    sharing: &SharingSpec,
    rho_bar: &BTreeMap<Id, f64>,
    loads: LoadSchedule,
    ts: f64,
) -> Result<Network, NetError> {
    let by_id: BTreeMap<Id, SubsystemModel> = models.into_iter().map(|m| (m.id, m)).collect();
    // Global ids for every (owner, comp) monitored by more than one unit.
    let mut monitors: BTreeMap<(Id, usize), Vec<Id>> = BTreeMap::new();
    for (id, m) in &by_id {
        for c in 0..m.n() {
            monitors.entry((*id, c)).or_default().push(*id);
        }
    }
    for (i, extra) in &sharing.extra {
        if !by_id.contains_key(i) {
            return Err(NetError::UnknownId(*i));
        }
        for &(j, c) in extra {
            let owner = by_id.get(&j).ok_or(NetError::UnknownId(j))?;
            if c >= owner.n() {
                return Err(NetError::Structure {
                    id: *i,
                    reason: format!("component {c} of {j} out of range"),
                });
            }
            monitors.entry((j, c)).or_default().push(*i);
        }
    }
    let mut shared_ids: BTreeMap<(Id, usize), usize> = BTreeMap::new();
    for (key, who) in &monitors {
        if who.len() > 1 {
            let k = shared_ids.len() + 1;
            shared_ids.insert(*key, k);
        }
    }

    let mut nodes = BTreeMap::new();
    let mut registry: BTreeMap<usize, Vec<(Id, usize)>> = BTreeMap::new();
    for (id, m) in &by_id {
        let mut layout: Vec<DiagComponent> = (0..m.n())
            .map(|c| DiagComponent {
                owner: *id,
                comp: c,
                shared: shared_ids.get(&(*id, c)).copied(),
            })
            .collect();
        for &(j, c) in sharing.extra.get(id).map(|v| v.as_slice()).unwrap_or(&[]) {
            layout.push(DiagComponent {
                owner: j,
                comp: c,
                shared: shared_ids.get(&(j, c)).copied(),
            });
        }
        for (pos, c) in layout.iter().enumerate() {
            if let Some(k) = c.shared {
                registry.entry(k).or_default().push((*id, pos));
            }
        }
        let rb = *rho_bar.get(id).ok_or(NetError::UnknownId(*id))?;
        let diag = build_diag(*id, &by_id, layout, rb, &loads)?;
        nodes.insert(
            *id,
            Node {
                model: m.clone(),
                diag,
            },
        );
    }
    let shared_owner = shared_ids.iter().map(|(key, k)| (*k, *key)).collect();
    let net = Network {
        active: nodes.keys().copied().collect(),
        nodes,
        shared_registry: registry,
        shared_owner,
        event_log: Vec::new(),
        loads,
        ts,
    };
    net.validate()?;
    Ok(net)
}

fn comp_bound(models: &BTreeMap<Id, SubsystemModel>, j: Id, c: usize) -> Result<f64, NetError> {
    let m = models.get(&j).ok_or(NetError::UnknownId(j))?;
    Ok(m.x_set.coord_interval(c)?.mag())
}

fn build_diag(
    id: Id,
    models: &BTreeMap<Id, SubsystemModel>,
    layout: Vec<DiagComponent>,
    rho_bar: f64,
    loads: &LoadSchedule,
) -> Result<DiagSubsystemModel, NetError> {
    let me = models.get(&id).ok_or(NetError::UnknownId(id))?;
    let nt = layout.len();
    let pos_of = |j: Id, c: usize| layout.iter().position(|e| e.owner == j && e.comp == c);
    let z_layout: Vec<(Id, usize)> = me
        .psi_layout
        .iter()
        .copied()
        .filter(|(j, c)| pos_of(*j, *c).is_none())
        .collect();
    let z_pos = |j: Id, c: usize| z_layout.iter().position(|e| *e == (j, c));
    let psi_sources = me
        .psi_layout
        .iter()
        .map(|&(j, c)| match pos_of(j, c) {
            Some(p) => PsiSource::Measured(p),
            None => PsiSource::Transmitted(z_pos(j, c).expect("z entry")),
        })
        .collect();
    let own_positions = (0..me.n()).map(|c| pos_of(id, c).expect("own component")).collect();

    let mut rows = Vec::with_capacity(nt);
    for entry in &layout {
        let owner = models.get(&entry.owner).ok_or(NetError::UnknownId(entry.owner))?;
        let c = entry.comp;
        let mut a_tilde = DVector::zeros(nt);
        let mut z_gain = DVector::zeros(z_layout.len());
        let mut w_const = 0.0;
        // Owner's own state columns.
        for cc in 0..owner.n() {
            let coef = owner.a[(c, cc)];
            if coef == 0.0 {
                continue;
            }
            if let Some(p) = pos_of(entry.owner, cc) {
                a_tilde[p] += coef;
            } else if let Some(q) = z_pos(entry.owner, cc) {
                z_gain[q] += coef.abs();
            } else {
                w_const += coef.abs() * comp_bound(models, entry.owner, cc)?;
            }
        }
        // Owner's coupling columns.
        for (p_idx, &(j, cc)) in owner.psi_layout.iter().enumerate() {
            let coef = owner.coupling[(c, p_idx)];
            if coef == 0.0 {
                continue;
            }
            if entry.owner == id {
                match pos_of(j, cc) {
                    Some(p) => a_tilde[p] += coef,
                    None => z_gain[z_pos(j, cc).expect("z entry")] += coef.abs(),
                }
            } else if let Some(p) = pos_of(j, cc) {
                a_tilde[p] += coef;
            } else if let Some(q) = z_pos(j, cc) {
                z_gain[q] += coef.abs();
            } else {
                w_const += coef.abs() * comp_bound(models, j, cc)?;
            }
        }
        let (b_tilde, e_coef) = if entry.owner == id {
            (
                owner.b.row(c).transpose(),
                owner.exogenous.as_ref().map(|e| e[c]).unwrap_or(0.0),
            )
        } else {
            // Input and load of another unit are unknown here: bound them.
            let x_box: Vec<Interval> = (0..owner.n())
                .map(|cc| owner.x_set.coord_interval(cc))
                .collect::<Result<_, _>>()?;
            let u_abs = owner.u_set.abs_bounds()?;
            let (ginv, h) = owner
                .matched
                .closed_form_bounds(&x_box, owner.m())
                .unwrap_or((Interval::point(1.0), vec![Interval::point(0.0); owner.m()]));
            let gmax = 1.0 / ginv.lo.abs().max(1e-12);
            for l in 0..owner.m() {
                w_const += owner.b[(c, l)].abs() * (gmax * u_abs[l] + h[l].mag());
            }
            if let Some(e) = &owner.exogenous {
                w_const += e[c].abs() * loads.max_abs(entry.owner);
            }
            (DVector::zeros(me.m()), 0.0)
        };
        rows.push(DiagRow {
            a_tilde,
            b_tilde,
            e_coef,
            z_gain,
            w_const,
        });
    }
    let x_tilde_bounds = layout
        .iter()
        .map(|e| {
            models
                .get(&e.owner)
                .ok_or(NetError::UnknownId(e.owner))
                .and_then(|m| Ok(m.x_set.coord_interval(e.comp)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiagSubsystemModel {
        id,
        rows,
        theta_bar: DVector::from_element(z_layout.len(), rho_bar),
        z_layout,
        psi_sources,
        own_positions,
        rho_bar: DVector::from_element(nt, rho_bar),
        layout,
        x_tilde_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(id: Id, a: f64, parents: Vec<Id>, children: Vec<Id>, coup: f64) -> SubsystemModel {
        let psi_layout: Vec<(Id, usize)> = parents.iter().map(|j| (*j, 0)).collect();
        let p = psi_layout.len();
        SubsystemModel {
            id,
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, 1.0),
            matched: MatchedMap::Unit,
            coupling: DMatrix::from_element(1, p, coup),
            exogenous: None,
            x_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
            u_set: HPolytope::symmetric_box(&[1.0]).unwrap(),
            o_set: HPolytope::symmetric_box(&[0.01]).unwrap(),
            parents,
            children,
            psi_layout,
        }
    }

    fn pair() -> Network {
        let m1 = scalar_model(1, 0.5, vec![2], vec![2], 0.1);
        let m2 = scalar_model(2, 0.5, vec![1], vec![1], 0.2);
        let rho = [(1, 0.01), (2, 0.01)].into_iter().collect();
        build_network(vec![m1, m2], &SharingSpec::default(), &rho, LoadSchedule::default(), 1.0)
            .unwrap()
    }

    #[test]
    fn equilibrium_stays_put() {
        let net = pair();
        let states: StateMap = net.ids().map(|i| (i, DVector::zeros(1))).collect();
        let next = step_plant(&net, &states, &states, &[], 0).unwrap();
        assert!(next.values().all(|x| x[0] == 0.0));
    }

    #[test]
    fn missing_input_is_an_error() {
        let net = pair();
        let states: StateMap = net.ids().map(|i| (i, DVector::zeros(1))).collect();
        let mut inputs = states.clone();
        inputs.remove(&2);
        assert_eq!(
            step_plant(&net, &states, &inputs, &[], 0).unwrap_err(),
            NetError::MissingInput(2)
        );
    }

    #[test]
    fn unplugged_parent_reads_zero() {
        let mut net = pair();
        let states: StateMap = [(1, DVector::from_element(1, 0.3)), (2, DVector::from_element(1, 0.7))]
            .into_iter()
            .collect();
        assert_eq!(assemble_psi(&net, 1, &states).unwrap()[0], 0.7);
        net.active.remove(&2);
        assert_eq!(assemble_psi(&net, 1, &states).unwrap()[0], 0.0);
    }

    #[test]
    fn noise_is_reproducible_and_bounded() {
        let src = NoiseSource::new(7);
        let b = DVector::from_element(3, 0.1);
        let a1 = src.draw(5, 2, &b);
        assert_eq!(a1, src.draw(5, 2, &b));
        assert_ne!(a1, src.draw(6, 2, &b));
        assert_ne!(a1, src.draw(5, 3, &b));
        assert!(a1.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn diag_rows_of_isolated_units_copy_the_model() {
        let net = pair();
        let d = &net.node(1).unwrap().diag;
        assert_eq!(d.rows[0].a_tilde[0], 0.5);
        assert_eq!(d.rows[0].b_tilde[0], 1.0);
        assert_eq!(d.z_layout, vec![(2, 0)]);
        assert!((d.rows[0].z_gain[0] - 0.1).abs() < 1e-15);
        assert_eq!(d.rows[0].w_const, 0.0);
    }

    #[test]
    fn stabilizability_detects_unreachable_unstable_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(!stabilizable(&a, &b));
        let b2 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(stabilizable(&a, &b2));
    }
}
