//! Closed-loop simulation of a scenario with fault detection and automatic
//! reconfiguration.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdx::{
    detect, estimation_error_envelope, fd_round, DetectionDecision, EnvelopeReport, FdError, FdUnit, LocalData,
    SharedSample, Verdict,
};
use crate::mpcx::{control_law, fallback_law, MpcError, MpcProblem, MpcStatus};
use crate::netmodel::{
    assemble_psi, assemble_z, measure, step_plant, Event, Id, NetError, Network, NoiseSource, StateMap,
};
use crate::pnp::{auto_policy, parameter_snapshot, plug_in, unplug, ControlLayer, DwellGuard, Intent, PnpError, ReconfigPlan};
use crate::scenarios::Scenario;
use crate::setsynth::{design_controller, DesignOutcome, Feedback, SynthError, TubeController};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("subsystem {id} at step {step}: {source}")]
    Control {
        id: Id,
        step: usize,
        #[source]
        source: MpcError,
    },
    #[error("no feasible controller for subsystem {0}")]
    MissingController(Id),
}

impl EngineError {
    /// Runtime certificate violations are reported separately by the CLI.
    pub fn is_certificate_violation(&self) -> bool {
        matches!(
            self,
            EngineError::Control {
                source: MpcError::CertificateViolation { .. },
                ..
            } | EngineError::Pnp(PnpError::CertificateViolation { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    pub seed: u64,
    /// Overrides the scenario duration.
    pub steps: Option<usize>,
    pub dwell_min: usize,
    pub auto_policy: bool,
}

impl EngineOptions {
    pub fn new(seed: u64) -> Self {
        EngineOptions {
            seed,
            steps: None,
            dwell_min: 0,
            auto_policy: true,
        }
    }
}

/// One row per (step, subsystem, extended-state component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub time: f64,
    pub subsystem: Id,
    pub component: usize,
    pub owner: Id,
    pub owner_component: usize,
    pub shared_id: Option<usize>,
    pub plugged: bool,
    pub true_state: f64,
    pub measured: f64,
    pub estimate: f64,
    /// Signed `y − x̂̃`.
    pub error: f64,
    pub residual: f64,
    pub threshold: f64,
    pub threshold_input: f64,
    pub pick: Option<Id>,
    pub nominal: Option<f64>,
    pub tube_error: Option<f64>,
    pub input: Option<f64>,
    pub aux_input: Option<f64>,
    pub mpc_status: String,
    pub cost: Option<f64>,
    pub iterations: Option<usize>,
    pub fault_phi: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusAudit {
    pub rows: usize,
    pub not_one_hot: usize,
    pub increment_mismatches: usize,
}

/// A reconfiguration together with the units whose parameters it changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub plan: ReconfigPlan,
    pub changed: BTreeSet<Id>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub detections: Vec<DetectionDecision>,
    pub unplugged: Vec<(Id, usize)>,
    pub plugged: Vec<(Id, usize)>,
    pub rejected: Vec<(Id, usize)>,
    pub retuned: BTreeSet<Id>,
    pub infeasible: Vec<(Id, usize)>,
    /// `(id, step)` where a healthy active unit left `X` or `U`.
    pub constraint_violations: Vec<(Id, usize)>,
    pub tube_violations: Vec<(Id, usize)>,
    pub max_tube_violation: f64,
    pub consensus: ConsensusAudit,
}

impl RunSummary {
    pub fn first_detection(&self) -> Option<&DetectionDecision> {
        self.detections.first()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub events: Vec<Event>,
    pub plans: Vec<PlanRecord>,
    pub summary: RunSummary,
}

/// Designs every controller of a scenario (in parallel).
pub fn design_all(scenario: &Scenario) -> Result<BTreeMap<Id, DesignOutcome>, SynthError> {
    let ids: Vec<Id> = scenario.net.ids().collect();
    let results: Vec<(Id, Result<DesignOutcome, SynthError>)> = ids
        .par_iter()
        .map(|id| {
            let node = &scenario.net.nodes[id];
            let parent_sets = node
                .model
                .parents
                .iter()
                .map(|j| (*j, scenario.net.nodes[j].model.x_set.clone()))
                .collect();
            let opts = &scenario.design[id];
            (*id, design_controller(&node.model, &parent_sets, opts))
        })
        .collect();
    let mut out = BTreeMap::new();
    for (id, r) in results {
        out.insert(id, r?);
    }
    Ok(out)
}

/// Online problems for a set of feasible designs.
pub fn build_layer(
    scenario: &Scenario,
    controllers: &BTreeMap<Id, TubeController>,
    retighten: bool,
) -> Result<ControlLayer, EngineError> {
    let mut problems = BTreeMap::new();
    for id in scenario.net.ids() {
        let c = controllers.get(&id).ok_or(EngineError::MissingController(id))?;
        let model = scenario.net.model(id)?;
        let p = MpcProblem::new(model, c.clone()).map_err(|source| EngineError::Control { id, step: 0, source })?;
        problems.insert(id, p);
    }
    Ok(ControlLayer::new(problems, scenario.design.clone(), retighten))
}

/// ψ assembled from the parents' own measurements.
fn measured_psi(net: &Network, i: Id, y: &StateMap) -> Result<DVector<f64>, NetError> {
    let model = net.model(i)?;
    let mut psi = DVector::zeros(model.p());
    for (q, (j, c)) in model.psi_layout.iter().enumerate() {
        if !net.is_active(*j) {
            continue;
        }
        let dj = &net.node(*j)?.diag;
        let pos = dj.position_of(*j, *c).ok_or(NetError::MissingState(*j))?;
        psi[q] = y[j][pos];
    }
    Ok(psi)
}

struct ControlOutput {
    u: DVector<f64>,
    u_dev: DVector<f64>,
    xhat0: DVector<f64>,
    v0: DVector<f64>,
    status: MpcStatus,
    cost: f64,
    iterations: usize,
    tube_violation: f64,
    tube_error: DVector<f64>,
}

fn op_point(scenario: &Scenario, net: &Network, id: Id, t: usize) -> Result<(DVector<f64>, DVector<f64>), NetError> {
    let m = net.model(id)?;
    Ok(scenario
        .trims
        .get(&id)
        .map(|trim| {
            let d = net.loads.value(id, t);
            (&trim.x * d, &trim.u * d)
        })
        .unwrap_or_else(|| (DVector::zeros(m.n()), DVector::zeros(m.m()))))
}

fn control_step(
    scenario: &Scenario,
    net: &Network,
    layer: &ControlLayer,
    states: &StateMap,
    y: &StateMap,
    id: Id,
    t: usize,
) -> Result<ControlOutput, EngineError> {
    let node = net.node(id)?;
    let model = &node.model;
    let prob = layer.problems.get(&id).ok_or(EngineError::MissingController(id))?;
    let (xs, us) = op_point(scenario, net, id, t)?;
    let (fb, psi) = match prob.controller.feedback {
        Feedback::State => (states[&id].clone(), assemble_psi(net, id, states)?),
        Feedback::Output => {
            let yi = &y[&id];
            let own = DVector::from_iterator(model.n(), node.diag.own_positions.iter().map(|&p| yi[p]));
            (own, measured_psi(net, id, y)?)
        }
    };
    let delta = fb - &xs;
    let ctl = |source| EngineError::Control { id, step: t, source };
    let sol = prob.solve(&delta).map_err(ctl)?;
    let u_dev = match sol.status {
        MpcStatus::Optimal => control_law(prob, model, &delta, &psi, &sol).map_err(ctl)?,
        MpcStatus::Infeasible => fallback_law(prob, model, &delta, &psi).map_err(ctl)?,
    };
    let true_dev = &states[&id] - &xs;
    let tube_error = &true_dev - &sol.xhat0;
    let tube_violation = if sol.status == MpcStatus::Optimal {
        prob.controller.z.max_violation(&tube_error)
    } else {
        0.0
    };
    Ok(ControlOutput {
        u: &u_dev + us,
        u_dev,
        xhat0: sol.xhat0.clone(),
        v0: sol.v_seq.first().cloned().unwrap_or_else(|| DVector::zeros(model.m())),
        status: sol.status,
        cost: sol.cost,
        iterations: sol.iterations,
        tube_violation,
        tube_error,
    })
}

/// Runs the closed loop with a pre-designed control layer.
pub fn simulate(scenario: &Scenario, mut layer: ControlLayer, opts: &EngineOptions) -> Result<RunResult, EngineError> {
    let mut net = scenario.net.clone();
    let steps = opts.steps.unwrap_or(scenario.steps);
    let noise = NoiseSource::new(opts.seed);
    let mut states = scenario.initial_states(opts.seed);
    let mut units: BTreeMap<Id, FdUnit> = BTreeMap::new();
    for (id, node) in &net.nodes {
        let fd = &scenario.fd;
        units.insert(*id, FdUnit::new(node, fd.lambda, fd.form, fd.samples, fd.inflation)?);
    }
    let mut summary = RunSummary {
        scenario: scenario.name.clone(),
        seed: opts.seed,
        steps,
        ..Default::default()
    };
    let mut trace = Vec::new();
    let mut plans = Vec::new();
    let mut guard = DwellGuard::new(opts.dwell_min);
    let mut pending: Vec<Intent> = Vec::new();
    let mut resets: BTreeSet<Id> = net.ids().collect();
    let mut alarmed: BTreeSet<(Id, Id)> = BTreeSet::new();

    for t in 0..steps {
        // Step boundary: deferred intents and scheduled replugs.
        let mut intents: Vec<Intent> = std::mem::take(&mut pending);
        if opts.auto_policy {
            intents.extend(auto_policy(&net, &[], &scenario.replugs, t));
        }
        execute(
            scenario, &mut net, &mut layer, &mut states, &mut units, &mut guard, &mut pending, &mut plans,
            &mut summary, &mut resets, intents, t,
        )?;

        let y = measure(&net, &states, &noise, t)?;
        for id in std::mem::take(&mut resets) {
            if let Some(u) = units.get_mut(&id) {
                u.reset(&y[&id]);
            }
            // Components owned by `id` in other units restart as well.
            for (other, unit) in units.iter_mut() {
                if *other == id {
                    continue;
                }
                let pos: Vec<usize> = unit
                    .diag
                    .layout
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.owner == id)
                    .map(|(p, _)| p)
                    .collect();
                if !pos.is_empty() {
                    unit.reset_positions(&y[other], &pos);
                }
            }
        }

        // Detection on the current residuals.
        let mut decisions = Vec::new();
        let mut verdicts: BTreeMap<Id, DetectionDecision> = BTreeMap::new();
        for (id, unit) in &units {
            if !net.is_active(*id) || unit.halted || !unit.started {
                continue;
            }
            let d = detect(unit, &net, &y[id], t);
            if d.verdict == Verdict::FaultDetected {
                if alarmed.insert((d.id, d.owner)) {
                    summary.detections.push(d.clone());
                    net.log(Event {
                        step: t,
                        time: t as f64 * net.ts,
                        kind: crate::netmodel::EventKind::Detection,
                        target: d.owner,
                        affected: vec![d.id],
                        reason: format!(
                            "unit {} component {}: residual {:.6e} > threshold {:.6e}",
                            d.id, d.component, d.residual, d.threshold
                        ),
                    });
                }
                decisions.push(d.clone());
            }
            verdicts.insert(*id, d);
        }
        for d in &decisions {
            if d.owner == d.id {
                if let Some(u) = units.get_mut(&d.id) {
                    u.halted = true;
                }
            }
        }

        // Local controllers.
        let active: Vec<Id> = net.active.iter().copied().collect();
        let mut controls: BTreeMap<Id, ControlOutput> = BTreeMap::new();
        for id in &active {
            controls.insert(*id, control_step(scenario, &net, &layer, &states, &y, *id, t)?);
        }
        let mut inputs = StateMap::new();
        for id in net.ids() {
            let m = net.model(id)?.m();
            inputs.insert(id, controls.get(&id).map(|c| c.u.clone()).unwrap_or_else(|| DVector::zeros(m)));
        }

        // Constraint and tube bookkeeping for healthy units.
        for (id, c) in &controls {
            let model = net.model(*id)?;
            let faulty = scenario.faults.iter().any(|f| f.target == *id && f.active_at(t));
            if c.status == MpcStatus::Infeasible {
                summary.infeasible.push((*id, t));
            }
            if faulty {
                continue;
            }
            let (xs, _) = op_point(scenario, &net, *id, t)?;
            let dev = &states[id] - xs;
            if !model.x_set.contains_point(&dev, 1e-9) || !model.u_set.contains_point(&c.u_dev, 1e-9) {
                summary.constraint_violations.push((*id, t));
            }
            if c.tube_violation > 1e-6 {
                summary.tube_violations.push((*id, t));
            }
            summary.max_tube_violation = summary.max_tube_violation.max(c.tube_violation);
        }

        // Fault functions for the trace.
        let mut phis: BTreeMap<Id, DVector<f64>> = BTreeMap::new();
        for f in &scenario.faults {
            if !net.is_active(f.target) {
                continue;
            }
            let model = net.model(f.target)?;
            let psi = assemble_psi(&net, f.target, &states)?;
            let d = net.loads.value(f.target, t);
            let phi = f.phi(model, &states[&f.target], &psi, &inputs[&f.target], d, t);
            let e = phis.entry(f.target).or_insert_with(|| DVector::zeros(model.n()));
            *e += phi;
        }

        // Record the step before the detectors move on.
        let snapshot: BTreeMap<Id, (DVector<f64>, DVector<f64>, DVector<f64>)> = units
            .iter()
            .map(|(id, u)| (*id, (u.xhat.clone(), u.eps_bar.clone(), u.eps_input.clone())))
            .collect();

        // Message round.
        let mut data = BTreeMap::new();
        for id in net.ids() {
            if !net.is_active(id) {
                continue;
            }
            data.insert(
                id,
                LocalData {
                    y: y[&id].clone(),
                    z: assemble_z(&net, id, &y)?,
                    u: inputs[&id].clone(),
                    d: net.loads.value(id, t),
                },
            );
        }
        let round = fd_round(&net, &mut units, &data)?;
        audit_round(&net, &units, &round, &snapshot, &mut summary.consensus);

        // Plant.
        let next = step_plant(&net, &states, &inputs, &scenario.faults, t)?;

        for (id, node) in &net.nodes {
            let (xhat, eps, eps_u) = &snapshot[id];
            let ctl = controls.get(id);
            for (p, c) in node.diag.layout.iter().enumerate() {
                let own = c.owner == *id;
                let x_true = states[&c.owner][c.comp];
                let yv = y[id][p];
                let err = yv - xhat[p];
                let verdict = match verdicts.get(id) {
                    Some(d) if d.verdict == Verdict::FaultDetected && d.component == p => "fault_detected",
                    Some(_) => "healthy",
                    None => "off",
                };
                trace.push(TraceRecord {
                    step: t,
                    time: t as f64 * net.ts,
                    subsystem: *id,
                    component: p,
                    owner: c.owner,
                    owner_component: c.comp,
                    shared_id: c.shared,
                    plugged: net.is_active(*id),
                    true_state: x_true,
                    measured: yv,
                    estimate: xhat[p],
                    error: err,
                    residual: err.abs(),
                    threshold: eps[p],
                    threshold_input: eps_u[p],
                    pick: round.picks.get(&(*id, p)).copied(),
                    nominal: ctl.filter(|_| own).map(|k| k.xhat0[c.comp]),
                    tube_error: ctl.filter(|_| own).map(|k| k.tube_error[c.comp]),
                    input: ctl.filter(|_| own).map(|k| k.u[0]),
                    aux_input: ctl.filter(|_| own).map(|k| k.v0[0]),
                    mpc_status: match ctl {
                        Some(k) => k.status.as_str().to_string(),
                        None => "off".to_string(),
                    },
                    cost: ctl.filter(|k| k.status == MpcStatus::Optimal).map(|k| k.cost),
                    iterations: ctl.map(|k| k.iterations),
                    fault_phi: if own { phis.get(id).map(|v| v[c.comp]) } else { None },
                    verdict: verdict.to_string(),
                });
            }
        }
        states = next;

        if opts.auto_policy {
            let intents = auto_policy(&net, &decisions, &[], t);
            execute(
                scenario, &mut net, &mut layer, &mut states, &mut units, &mut guard, &mut pending, &mut plans,
                &mut summary, &mut resets, intents, t,
            )?;
        }
    }
    Ok(RunResult {
        trace,
        events: net.event_log.clone(),
        plans,
        summary,
    })
}

fn audit_round(
    net: &Network,
    units: &BTreeMap<Id, FdUnit>,
    round: &crate::fdx::RoundOutput,
    before: &BTreeMap<Id, (DVector<f64>, DVector<f64>, DVector<f64>)>,
    audit: &mut ConsensusAudit,
) {
    let _ = before;
    for (id, rows) in &round.rows {
        let unit = &units[id];
        for (k, row) in rows {
            audit.rows += 1;
            let members: Vec<Id> = net.active_members(*k).iter().map(|(i, _)| *i).collect();
            if !row.is_one_hot(&members) {
                audit.not_one_hot += 1;
            }
            let Some(p) = unit.diag.layout.iter().position(|c| c.shared == Some(*k)) else {
                continue;
            };
            let best = round
                .messages
                .iter()
                .filter(|m| m.k == *k)
                .map(|m| m.threshold_term)
                .fold(f64::INFINITY, f64::min);
            let realized = unit.eps_bar[p] - (unit.lambda + 1.0) * unit.rho_bar[p];
            if (realized - best).abs() > 1e-12 * (1.0 + best.abs()) {
                audit.increment_mismatches += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn execute(
    scenario: &Scenario,
    net: &mut Network,
    layer: &mut ControlLayer,
    states: &mut StateMap,
    units: &mut BTreeMap<Id, FdUnit>,
    guard: &mut DwellGuard,
    pending: &mut Vec<Intent>,
    plans: &mut Vec<PlanRecord>,
    summary: &mut RunSummary,
    resets: &mut BTreeSet<Id>,
    intents: Vec<Intent>,
    t: usize,
) -> Result<(), EngineError> {
    for intent in intents {
        if !guard.allows(t) {
            pending.push(intent);
            continue;
        }
        let before = parameter_snapshot(net, layer);
        let plan = match intent {
            Intent::Unplug { target, trigger } => {
                if !net.is_active(target) {
                    continue;
                }
                if let Some(u) = units.get_mut(&target) {
                    u.halted = true;
                }
                let plan = unplug(net, layer, target, t, trigger)?;
                summary.unplugged.push((target, t));
                plan
            }
            Intent::PlugIn { target, state } => {
                let (xs, _) = op_point(scenario, net, target, t)?;
                match plug_in(net, layer, target, &(&state - &xs), t) {
                    Ok(plan) => {
                        states.insert(target, state.clone());
                        resets.insert(target);
                        summary.plugged.push((target, t));
                        plan
                    }
                    Err(PnpError::Rejected { id, .. }) => {
                        summary.rejected.push((id, t));
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };
        guard.record(t);
        let after = parameter_snapshot(net, layer);
        let changed: BTreeSet<Id> = before
            .iter()
            .filter(|(id, s)| after.get(id) != Some(s))
            .map(|(id, _)| *id)
            .collect();
        summary.retuned.extend(plan.affected.iter().copied());
        plans.push(PlanRecord { plan, changed });
    }
    Ok(())
}

/// Samples of shared variable `k` from plugged members of a trace.
pub fn shared_samples(trace: &[TraceRecord], k: usize) -> Vec<SharedSample> {
    trace
        .iter()
        .filter(|r| r.plugged && r.shared_id == Some(k))
        .filter_map(|r| {
            r.pick.map(|pick| SharedSample {
                step: r.step,
                unit: r.subsystem,
                residual: r.error,
                threshold: r.threshold,
                pick,
            })
        })
        .collect()
}

/// Envelope reports for every shared variable seen by more than one unit.
pub fn shared_envelopes(trace: &[TraceRecord], lambda: f64) -> Vec<EnvelopeReport> {
    let mut ks: BTreeMap<usize, BTreeSet<Id>> = BTreeMap::new();
    for r in trace {
        if let Some(k) = r.shared_id {
            ks.entry(k).or_default().insert(r.subsystem);
        }
    }
    ks.into_iter()
        .filter(|(_, m)| m.len() > 1)
        .map(|(k, _)| estimation_error_envelope(k, lambda, &shared_samples(trace, k)))
        .collect()
}
