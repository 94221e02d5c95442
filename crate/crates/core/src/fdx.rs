//! Distributed fault detection: local estimators with consensus on shared
//! variables, adaptive thresholds, detection decisions and the offline
//! detectability analysis.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{DiagSubsystemModel, Id, MatchedMap, NetError, Network, Node};

#[derive(Debug, Error, PartialEq)]
pub enum FdError {
    #[error("filter parameter {0} outside (0, 1)")]
    InvalidLambda(f64),
    #[error("no consensus candidates for shared variable {0}")]
    EmptyCandidates(usize),
    #[error("unit {receiver} lacks a message from {sender} for shared variable {k}")]
    MissingMessage { receiver: Id, sender: Id, k: usize },
    #[error("unit {id}: {what} has length {got}, expected {expected}")]
    Dimension {
        id: Id,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Update rule used for the local estimates.
///
/// `ErrorConsistent` makes the residual obey the extended error recursion
/// exactly: `x̂⁺ = Σ_j W_j (λ x̂_j + P_j) − λ y_i`. `Literal` is the
/// displayed per-unit update `λ (x̂_i − y_i) + Σ_j W_j (x̂_j − x̂_i + P_j)`.
/// Both agree on non-shared components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorForm {
    #[default]
    ErrorConsistent,
    Literal,
}

/// Local data a detector sees at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    /// Commanded input (what the detector knows, not what the actuator did).
    pub u: DVector<f64>,
    pub d: f64,
}

/// One local fault detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FdUnit {
    pub id: Id,
    pub lambda: f64,
    pub form: EstimatorForm,
    pub xhat: DVector<f64>,
    pub eps_bar: DVector<f64>,
    /// Part of `eps_bar` driven by the `Δḡ |u|` terms.
    pub eps_input: DVector<f64>,
    pub rho_bar: DVector<f64>,
    pub dg_bar: f64,
    pub dh_bar: f64,
    pub diag: DiagSubsystemModel,
    matched: MatchedMap,
    m: usize,
    pub halted: bool,
    pub started: bool,
}

/// Terms a unit broadcasts for one shared variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusMessage {
    pub sender: Id,
    pub k: usize,
    /// Sender's current estimate `x̂_{j,k}`.
    pub estimate: f64,
    /// Model prediction `Ã_{jj,k} y_j + B̃_{j,k} (g̃ u + h̃) + e d`.
    pub prediction: f64,
    /// Bracketed summand of the threshold recursion.
    pub threshold_term: f64,
    /// Input-driven share of `threshold_term`.
    pub input_term: f64,
    pub selection_score: f64,
}

/// One row of the consensus matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub k: usize,
    pub weights: BTreeMap<Id, f64>,
}

impl ConsensusRow {
    pub fn selected(&self) -> Option<Id> {
        self.weights.iter().find(|(_, w)| **w == 1.0).map(|(id, _)| *id)
    }

    /// Exactly one unit weight among `members`, zero elsewhere.
    pub fn is_one_hot(&self, members: &[Id]) -> bool {
        let ones = self.weights.values().filter(|w| **w == 1.0).count();
        let zeros = self.weights.values().filter(|w| **w == 0.0).count();
        let inside = self.weights.iter().all(|(id, w)| *w == 0.0 || members.contains(id));
        ones == 1 && ones + zeros == self.weights.len() && inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Healthy,
    FaultDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDecision {
    pub id: Id,
    pub step: usize,
    /// Extended-state position; the first violating one, or the tightest
    /// one when healthy.
    pub component: usize,
    /// Owner of that component, for attribution.
    pub owner: Id,
    pub residual: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Per-row quantities computed locally from `(y, z, u, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RowTerm {
    prediction: f64,
    threshold_term: f64,
    input_term: f64,
}

/// Sampled `Δḡ`, `Δh̄`: the largest change of `g`, `h` when the state is
/// replaced by a measurement within `ρ̄`. The registered maps do not read
/// `ψ`, so only the own state is sampled.
pub fn matched_uncertainty(
    matched: &MatchedMap,
    x_box: &[crate::geometry::Interval],
    rho: &[f64],
    m: usize,
    samples: usize,
    inflation: f64,
) -> (f64, f64) {
    if matched.is_unit() {
        return (0.0, 0.0);
    }
    let n = x_box.len();
    let per = ((samples as f64).powf(1.0 / n.max(1) as f64).floor() as usize).max(2);
    let psi = DVector::zeros(0);
    let mut dg = 0.0f64;
    let mut dh = 0.0f64;
    let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut idx = vec![0usize; n];
    loop {
        let x = DVector::from_iterator(
            n,
            idx.iter()
                .zip(x_box)
                .map(|(&i, b)| b.lo + (b.hi - b.lo) * i as f64 / (per - 1) as f64),
        );
        let g0 = matched.gain(&x, &psi);
        let h0 = matched.drift(&x, &psi, m);
        let mut pert = vec![0usize; n];
        loop {
            let xp = DVector::from_iterator(n, (0..n).map(|c| x[c] + offsets[pert[c]] * rho[c]));
            dg = dg.max((matched.gain(&xp, &psi) - g0).abs());
            dh = dh.max((matched.drift(&xp, &psi, m) - &h0).amax());
            if !advance(&mut pert, offsets.len()) {
                break;
            }
        }
        if !advance(&mut idx, per) {
            break;
        }
    }
    (dg * (1.0 + inflation), dh * (1.0 + inflation))
}

fn advance(idx: &mut [usize], base: usize) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < base {
            return true;
        }
        *v = 0;
    }
    false
}

impl FdUnit {
    pub fn new(node: &Node, lambda: f64, form: EstimatorForm, samples: usize, inflation: f64) -> Result<Self, FdError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(FdError::InvalidLambda(lambda));
        }
        let diag = node.diag.clone();
        let model = &node.model;
        let x_box: Vec<_> = (0..model.n())
            .map(|c| model.x_set.coord_interval(c))
            .collect::<Result<_, _>>()
            .map_err(NetError::from)?;
        let rho: Vec<f64> = diag.own_positions.iter().map(|&p| diag.rho_bar[p]).collect();
        let (dg_bar, dh_bar) = matched_uncertainty(&model.matched, &x_box, &rho, model.m(), samples, inflation);
        let nt = diag.n_tilde();
        Ok(FdUnit {
            id: node.diag.id,
            lambda,
            form,
            xhat: DVector::zeros(nt),
            eps_bar: diag.rho_bar.clone(),
            eps_input: DVector::zeros(nt),
            rho_bar: diag.rho_bar.clone(),
            dg_bar,
            dh_bar,
            matched: model.matched.clone(),
            m: model.m(),
            diag,
            halted: false,
            started: false,
        })
    }

    /// `x̂ = y`, `ε̄ = ρ̄`.
    pub fn reset(&mut self, y: &DVector<f64>) {
        self.xhat = y.clone();
        self.eps_bar = self.rho_bar.clone();
        self.eps_input = DVector::zeros(self.rho_bar.len());
        self.halted = false;
        self.started = true;
    }

    /// Re-initializes only the listed positions.
    pub fn reset_positions(&mut self, y: &DVector<f64>, positions: &[usize]) {
        for &p in positions {
            self.xhat[p] = y[p];
            self.eps_bar[p] = self.rho_bar[p];
            self.eps_input[p] = 0.0;
        }
    }

    fn check(&self, data: &LocalData) -> Result<(), FdError> {
        let dims = [
            ("y", self.diag.n_tilde(), data.y.len()),
            ("z", self.diag.z_layout.len(), data.z.len()),
            ("u", self.m, data.u.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(FdError::Dimension {
                    id: self.id,
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// `w̄_{i,p}(z)` for every extended row.
    pub fn coupling_bounds(&self, net: &Network, z: &DVector<f64>) -> DVector<f64> {
        let live_z: Vec<bool> = self.diag.z_layout.iter().map(|(j, _)| net.is_active(*j)).collect();
        DVector::from_iterator(
            self.diag.n_tilde(),
            self.diag.rows.iter().map(|row| {
                row.w_const
                    + row
                        .z_gain
                        .iter()
                        .enumerate()
                        .filter(|(q, _)| live_z[*q])
                        .map(|(q, g)| g * (z[q].abs() + self.diag.theta_bar[q]))
                        .sum::<f64>()
            }),
        )
    }

    fn row_terms(&self, net: &Network, data: &LocalData) -> Result<Vec<RowTerm>, FdError> {
        self.check(data)?;
        let nt = self.diag.n_tilde();
        let live: Vec<bool> = (0..nt).map(|p| net.component_live(self.id, p)).collect();
        let y_eff = DVector::from_iterator(nt, (0..nt).map(|p| if live[p] { data.y[p] } else { 0.0 }));
        let (x_own, psi) = self.diag.split_measurement(&y_eff, &data.z);
        let g = self.matched.gain(&x_own, &psi);
        let h = self.matched.drift(&x_own, &psi, self.m);
        let act = &data.u * g + h;
        let wbar = self.coupling_bounds(net, &data.z);
        let lam = self.lambda;
        let mut out = Vec::with_capacity(nt);
        for (p, row) in self.diag.rows.iter().enumerate() {
            let prediction = row.a_tilde.dot(&y_eff) + row.b_tilde.dot(&act) + row.e_coef * data.d;
            let a_rho: f64 = row
                .a_tilde
                .iter()
                .enumerate()
                .filter(|(c, _)| live[*c])
                .map(|(c, a)| a.abs() * self.rho_bar[c])
                .sum();
            let input: f64 = row
                .b_tilde
                .iter()
                .zip(data.u.iter())
                .map(|(b, u)| b.abs() * self.dg_bar * u.abs())
                .sum();
            let drift: f64 = row.b_tilde.iter().map(|b| b.abs() * self.dh_bar).sum();
            let threshold_term = lam * self.eps_bar[p] + a_rho + wbar[p] + input + drift + lam * self.rho_bar[p];
            out.push(RowTerm {
                prediction,
                threshold_term,
                input_term: lam * self.eps_input[p] + input,
            });
        }
        Ok(out)
    }

    /// Messages for every live shared component of this unit.
    pub fn messages(&self, net: &Network, data: &LocalData) -> Result<Vec<ConsensusMessage>, FdError> {
        let terms = self.row_terms(net, data)?;
        Ok(self
            .diag
            .layout
            .iter()
            .enumerate()
            .filter(|(p, _)| net.component_live(self.id, *p))
            .filter_map(|(p, c)| {
                c.shared.map(|k| ConsensusMessage {
                    sender: self.id,
                    k,
                    estimate: self.xhat[p],
                    prediction: terms[p].prediction,
                    threshold_term: terms[p].threshold_term,
                    input_term: terms[p].input_term,
                    selection_score: terms[p].threshold_term,
                })
            })
            .collect())
    }
}

/// One-hot consensus row: weight 1 on the smallest selection score, lowest
/// id on ties.
pub fn consensus_weights(k: usize, candidates: &[ConsensusMessage]) -> Result<ConsensusRow, FdError> {
    let mut best: Option<&ConsensusMessage> = None;
    for c in candidates.iter().filter(|c| c.k == k) {
        best = match best {
            None => Some(c),
            Some(b) if c.selection_score < b.selection_score => Some(c),
            Some(b) if c.selection_score == b.selection_score && c.sender < b.sender => Some(c),
            keep => keep,
        };
    }
    let best = best.ok_or(FdError::EmptyCandidates(k))?;
    let weights = candidates
        .iter()
        .filter(|c| c.k == k)
        .map(|c| (c.sender, if c.sender == best.sender { 1.0 } else { 0.0 }))
        .collect();
    Ok(ConsensusRow { k, weights })
}

/// Selected contribution for each position: own terms for non-shared rows,
/// the consensus pick for shared ones.
fn selections(
    unit: &FdUnit,
    net: &Network,
    data: &LocalData,
    inbox: &[ConsensusMessage],
    rows: &BTreeMap<usize, ConsensusRow>,
) -> Result<Vec<Option<ConsensusMessage>>, FdError> {
    let terms = unit.row_terms(net, data)?;
    let mut out = Vec::with_capacity(terms.len());
    for (p, c) in unit.diag.layout.iter().enumerate() {
        if !net.component_live(unit.id, p) {
            out.push(None);
            continue;
        }
        let own = ConsensusMessage {
            sender: unit.id,
            k: c.shared.unwrap_or(0),
            estimate: unit.xhat[p],
            prediction: terms[p].prediction,
            threshold_term: terms[p].threshold_term,
            input_term: terms[p].input_term,
            selection_score: terms[p].threshold_term,
        };
        let pick = match c.shared {
            None => own,
            Some(k) => {
                let row = rows.get(&k).ok_or(FdError::EmptyCandidates(k))?;
                let sender = row.selected().ok_or(FdError::EmptyCandidates(k))?;
                if sender == unit.id {
                    own
                } else {
                    *inbox
                        .iter()
                        .find(|m| m.k == k && m.sender == sender)
                        .ok_or(FdError::MissingMessage {
                            receiver: unit.id,
                            sender,
                            k,
                        })?
                }
            }
        };
        out.push(Some(pick));
    }
    Ok(out)
}

/// New local estimate.
pub fn estimator_step(
    unit: &FdUnit,
    net: &Network,
    data: &LocalData,
    inbox: &[ConsensusMessage],
    rows: &BTreeMap<usize, ConsensusRow>,
) -> Result<DVector<f64>, FdError> {
    let picks = selections(unit, net, data, inbox, rows)?;
    let lam = unit.lambda;
    let mut next = unit.xhat.clone();
    for (p, pick) in picks.iter().enumerate() {
        let Some(s) = pick else { continue };
        next[p] = match unit.form {
            EstimatorForm::ErrorConsistent => lam * s.estimate + s.prediction - lam * data.y[p],
            EstimatorForm::Literal => {
                lam * (unit.xhat[p] - data.y[p]) + s.estimate - unit.xhat[p] + s.prediction
            }
        };
    }
    Ok(next)
}

/// New thresholds `(ε̄⁺, input-driven part)`.
pub fn threshold_step(
    unit: &FdUnit,
    net: &Network,
    data: &LocalData,
    inbox: &[ConsensusMessage],
    rows: &BTreeMap<usize, ConsensusRow>,
) -> Result<(DVector<f64>, DVector<f64>), FdError> {
    let picks = selections(unit, net, data, inbox, rows)?;
    let lam = unit.lambda;
    let mut eps = unit.eps_bar.clone();
    let mut eps_u = unit.eps_input.clone();
    for (p, pick) in picks.iter().enumerate() {
        let Some(s) = pick else { continue };
        eps[p] = s.threshold_term + lam * unit.rho_bar[p] + unit.rho_bar[p];
        eps_u[p] = s.input_term;
    }
    Ok((eps, eps_u))
}

/// Residual test on every live component.
pub fn detect(unit: &FdUnit, net: &Network, y: &DVector<f64>, step: usize) -> DetectionDecision {
    let mut tight: Option<(usize, f64, f64, f64)> = None;
    for p in 0..unit.diag.n_tilde() {
        if !net.component_live(unit.id, p) {
            continue;
        }
        let r = (y[p] - unit.xhat[p]).abs();
        let e = unit.eps_bar[p];
        if r > e {
            return DetectionDecision {
                id: unit.id,
                step,
                component: p,
                owner: unit.diag.layout[p].owner,
                residual: r,
                threshold: e,
                verdict: Verdict::FaultDetected,
            };
        }
        let ratio = if e > 0.0 { r / e } else { 0.0 };
        if tight.map(|t| ratio > t.3).unwrap_or(true) {
            tight = Some((p, r, e, ratio));
        }
    }
    let (p, r, e, _) = tight.unwrap_or((0, 0.0, 0.0, 0.0));
    DetectionDecision {
        id: unit.id,
        step,
        component: p,
        owner: unit.diag.layout.get(p).map(|c| c.owner).unwrap_or(unit.id),
        residual: r,
        threshold: e,
        verdict: Verdict::Healthy,
    }
}

/// Outcome of one synchronous message round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundOutput {
    /// Consensus rows built by each receiving unit.
    pub rows: BTreeMap<Id, BTreeMap<usize, ConsensusRow>>,
    /// Contributor selected for each `(unit, position)`.
    pub picks: BTreeMap<(Id, usize), Id>,
    pub messages: Vec<ConsensusMessage>,
}

/// Publish, then update every running detector at once.
pub fn fd_round(
    net: &Network,
    units: &mut BTreeMap<Id, FdUnit>,
    data: &BTreeMap<Id, LocalData>,
) -> Result<RoundOutput, FdError> {
    let running: Vec<Id> = units
        .iter()
        .filter(|(id, u)| net.is_active(**id) && u.started && !u.halted)
        .map(|(id, _)| *id)
        .collect();
    let mut messages = Vec::new();
    for id in &running {
        let d = data.get(id).ok_or(NetError::MissingState(*id))?;
        messages.extend(units[id].messages(net, d)?);
    }
    let mut out = RoundOutput {
        messages: messages.clone(),
        ..Default::default()
    };
    let mut updates = Vec::with_capacity(running.len());
    for id in &running {
        let unit = &units[id];
        let d = &data[id];
        let mut rows = BTreeMap::new();
        for c in unit.diag.layout.iter() {
            if let Some(k) = c.shared {
                if net.is_active(c.owner) && !rows.contains_key(&k) {
                    rows.insert(k, consensus_weights(k, &messages)?);
                }
            }
        }
        let xhat = estimator_step(unit, net, d, &messages, &rows)?;
        let (eps, eps_u) = threshold_step(unit, net, d, &messages, &rows)?;
        for (p, c) in unit.diag.layout.iter().enumerate() {
            if !net.component_live(*id, p) {
                continue;
            }
            let pick = match c.shared {
                Some(k) => rows[&k].selected().unwrap_or(*id),
                None => *id,
            };
            out.picks.insert((*id, p), pick);
        }
        out.rows.insert(*id, rows);
        updates.push((*id, xhat, eps, eps_u));
    }
    for (id, xhat, eps, eps_u) in updates {
        let u = units.get_mut(&id).expect("running unit");
        u.xhat = xhat;
        u.eps_bar = eps;
        u.eps_input = eps_u;
    }
    Ok(out)
}

/// Earliest `t₁ > T0` with `|Σ_{h=T0}^{t₁−1} λ^{t₁−1−h} φ(h)| > 2 ε̄(t₁)`.
/// Both traces are indexed by step.
pub fn detectability_check(phi: &[f64], lambda: f64, threshold: &[f64], t0: usize) -> Option<usize> {
    let mut acc = 0.0;
    for t1 in (t0 + 1)..threshold.len() {
        acc = lambda * acc + phi.get(t1 - 1).copied().unwrap_or(0.0);
        if acc.abs() > 2.0 * threshold[t1] {
            return Some(t1);
        }
    }
    None
}

/// Per-step record of one shared-variable member, as read from a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedSample {
    pub step: usize,
    pub unit: Id,
    pub residual: f64,
    pub threshold: f64,
    pub pick: Id,
}

/// Result of the BIBO envelope check for one shared variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub k: usize,
    pub members: Vec<Id>,
    pub steps: usize,
    /// `sup_t ‖ε(t)‖ / (λᵗ ‖ε(0)‖ + (1−λ)⁻¹ sup ‖U‖)`.
    pub max_ratio: f64,
    pub sup_forcing: f64,
    /// Every forcing entry stayed within its threshold budget.
    pub forcing_within_threshold: bool,
    pub holds: bool,
}

/// BIBO check of the extended error recursion `ε⁺ = λ W ε + U` from logged
/// signed residuals. Segments restart whenever the member set changes.
pub fn estimation_error_envelope(k: usize, lambda: f64, samples: &[SharedSample]) -> EnvelopeReport {
    let mut by_step: BTreeMap<usize, BTreeMap<Id, SharedSample>> = BTreeMap::new();
    for s in samples {
        by_step.entry(s.step).or_default().insert(s.unit, *s);
    }
    let steps: Vec<usize> = by_step.keys().copied().collect();
    let mut members_all: Vec<Id> = Vec::new();
    let mut max_ratio = 0.0f64;
    let mut sup_all = 0.0f64;
    let mut within = true;
    let mut seg_start = 0usize;
    while seg_start < steps.len() {
        let members: Vec<Id> = by_step[&steps[seg_start]].keys().copied().collect();
        for m in &members {
            if !members_all.contains(m) {
                members_all.push(*m);
            }
        }
        let mut seg_end = seg_start + 1;
        while seg_end < steps.len()
            && steps[seg_end] == steps[seg_end - 1] + 1
            && by_step[&steps[seg_end]].keys().copied().collect::<Vec<_>>() == members
        {
            seg_end += 1;
        }
        let eps = |i: usize| -> Vec<f64> { members.iter().map(|m| by_step[&steps[i]][m].residual).collect() };
        let e0 = eps(seg_start).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut sup_u = 0.0f64;
        for i in seg_start..seg_end.saturating_sub(1) {
            let now = &by_step[&steps[i]];
            let next = &by_step[&steps[i + 1]];
            for m in &members {
                let pick = now[m].pick;
                let src = now.get(&pick).map(|s| s.residual).unwrap_or(0.0);
                let u = next[m].residual - lambda * src;
                sup_u = sup_u.max(u.abs());
                let budget = next[m].threshold - lambda * now.get(&pick).map(|s| s.threshold).unwrap_or(0.0);
                if u.abs() > budget + 1e-9 {
                    within = false;
                }
            }
        }
        sup_all = sup_all.max(sup_u);
        for (t, i) in (seg_start..seg_end).enumerate() {
            let norm = eps(i).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let bound = lambda.powi(t as i32) * e0 + sup_u / (1.0 - lambda);
            let ratio = if bound > 0.0 {
                norm / bound
            } else if norm > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_ratio = max_ratio.max(ratio);
        }
        seg_start = seg_end;
    }
    EnvelopeReport {
        k,
        members: members_all,
        steps: steps.len(),
        max_ratio,
        sup_forcing: sup_all,
        forcing_within_threshold: within,
        holds: max_ratio <= 1.0 + 1e-9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(sender: Id, score: f64) -> ConsensusMessage {
        ConsensusMessage {
            sender,
            k: 1,
            estimate: 0.0,
            prediction: 0.0,
            threshold_term: score,
            input_term: 0.0,
            selection_score: score,
        }
    }

    #[test]
    fn single_candidate_gets_full_weight() {
        let row = consensus_weights(1, &[msg(4, 0.7)]).unwrap();
        assert_eq!(row.selected(), Some(4));
        assert!(row.is_one_hot(&[4]));
    }

    #[test]
    fn smallest_score_wins_and_ties_go_to_lowest_id() {
        let row = consensus_weights(1, &[msg(2, 0.5), msg(3, 0.3)]).unwrap();
        assert_eq!(row.selected(), Some(3));
        let tie = consensus_weights(1, &[msg(5, 0.3), msg(3, 0.3)]).unwrap();
        assert_eq!(tie.selected(), Some(3));
    }

    #[test]
    fn empty_candidates_rejected() {
        assert_eq!(consensus_weights(7, &[]), Err(FdError::EmptyCandidates(7)));
    }

    #[test]
    fn zero_fault_is_never_detectable() {
        assert_eq!(detectability_check(&[0.0; 20], 0.5, &[0.1; 20], 3), None);
    }
}
