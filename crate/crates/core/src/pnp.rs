//! Runtime reconfiguration: unplug a faulty subsystem, retune the units
//! around it, and plug it back in after repair.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdx::{DetectionDecision, Verdict};
use crate::geometry::{HPolytope, SET_TOL};
use crate::mpcx::{feasible_region_probe, MpcError, MpcProblem};
use crate::netmodel::{Event, EventKind, Id, NetError, Network};
use crate::scenarios::ReplugSpec;
use crate::setsynth::{coupling_set, design_controller, DesignOptions, DesignOutcome, SynthError};

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("subsystem {0} is not plugged in")]
    NotActive(Id),
    #[error("subsystem {0} is already plugged in")]
    AlreadyActive(Id),
    #[error("no controller stored for subsystem {0}")]
    NoController(Id),
    #[error("design certificate violated for subsystem {id}: {reason}")]
    CertificateViolation { id: Id, reason: String },
    #[error("plug-in of {id} rejected: {reason}")]
    Rejected { id: Id, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Detection { decision: DetectionDecision },
    Manual,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    ZeroInterconnection { child: Id },
    ShrinkWBar { unit: Id },
    DropFromSk { k: usize },
    RetuneController { unit: Id },
    RestoreInterconnection { child: Id },
    RestoreWBar { unit: Id },
    RestoreSk { k: usize },
    ResetDetector { unit: Id },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigPlan {
    pub step: usize,
    pub trigger: Trigger,
    pub target: Id,
    pub affected: BTreeSet<Id>,
    pub actions: Vec<Action>,
}

/// Online controllers plus what is needed to retune them.
#[derive(Debug, Clone)]
pub struct ControlLayer {
    pub problems: BTreeMap<Id, MpcProblem>,
    /// Controllers designed for the full network.
    pub baseline: BTreeMap<Id, MpcProblem>,
    pub design: BTreeMap<Id, DesignOptions>,
    pub retighten: bool,
}

impl ControlLayer {
    pub fn new(problems: BTreeMap<Id, MpcProblem>, design: BTreeMap<Id, DesignOptions>, retighten: bool) -> Self {
        ControlLayer {
            baseline: problems.clone(),
            problems,
            design,
            retighten,
        }
    }
}

fn active_parent_sets(net: &Network, i: Id) -> Result<BTreeMap<Id, HPolytope>, NetError> {
    let model = net.model(i)?;
    let mut out = BTreeMap::new();
    for j in &model.parents {
        if net.is_active(*j) {
            out.insert(*j, net.model(*j)?.x_set.clone());
        }
    }
    Ok(out)
}

/// Units whose parameters depend on `j`: its children and every unit
/// sharing a monitored variable with it.
pub fn neighbourhood(net: &Network, j: Id) -> Result<BTreeSet<Id>, NetError> {
    let mut out: BTreeSet<Id> = net.model(j)?.children.iter().copied().collect();
    for members in net.shared_registry.values() {
        if members.iter().any(|(i, _)| *i == j) {
            out.extend(members.iter().map(|(i, _)| *i));
        }
    }
    out.remove(&j);
    Ok(out)
}

/// Recomputes the coupling set of `i` for the current topology and adapts
/// its controller.
fn refresh_controller(net: &Network, layer: &mut ControlLayer, i: Id) -> Result<(), PnpError> {
    let model = net.model(i)?.clone();
    let sets = active_parent_sets(net, i)?;
    let all_active = model.parents.iter().all(|j| net.is_active(*j));
    if all_active {
        let base = layer.baseline.get(&i).ok_or(PnpError::NoController(i))?.clone();
        layer.problems.insert(i, base);
        return Ok(());
    }
    let w_new = coupling_set(&model, &sets)?;
    let current = layer.problems.get(&i).ok_or(PnpError::NoController(i))?;
    // A smaller coupling set keeps the stored design valid.
    let omega = current.controller.omega;
    let ball = HPolytope::symmetric_box(&vec![omega; model.n()]).map_err(SynthError::from)?;
    let need = w_new.minkowski_sum(&ball).map_err(SynthError::from)?;
    let base = layer.baseline.get(&i).ok_or(PnpError::NoController(i))?;
    if !base.controller.zbar0.contains(&need).map_err(SynthError::from)? {
        return Err(PnpError::CertificateViolation {
            id: i,
            reason: "reduced coupling set is not inside the stored Z̄⁰".into(),
        });
    }
    if layer.retighten {
        let opts = layer.design.get(&i).ok_or(PnpError::NoController(i))?;
        match design_controller(&model, &sets, opts)? {
            DesignOutcome::Feasible(c) => {
                layer.problems.insert(i, MpcProblem::new(&model, *c)?);
                return Ok(());
            }
            DesignOutcome::Infeasible(f) => {
                return Err(PnpError::CertificateViolation {
                    id: i,
                    reason: format!("redesign with a smaller coupling set failed at {f}"),
                })
            }
        }
    }
    let mut p = base.clone();
    p.controller.w = w_new;
    layer.problems.insert(i, p);
    Ok(())
}

fn shared_ids_of(net: &Network, j: Id) -> Vec<usize> {
    net.shared_registry
        .iter()
        .filter(|(_, m)| m.iter().any(|(i, _)| *i == j))
        .map(|(k, _)| *k)
        .collect()
}

/// Disconnects `j` and retunes its neighbourhood.
pub fn unplug(
    net: &mut Network,
    layer: &mut ControlLayer,
    j: Id,
    step: usize,
    trigger: Trigger,
) -> Result<ReconfigPlan, PnpError> {
    if !net.is_active(j) {
        return Err(PnpError::NotActive(j));
    }
    net.active.remove(&j);
    let affected: BTreeSet<Id> = neighbourhood(net, j)?
        .into_iter()
        .filter(|i| net.is_active(*i))
        .collect();
    let children: Vec<Id> = net.model(j)?.children.clone();
    let mut actions = Vec::new();
    for &i in &children {
        if !net.is_active(i) {
            continue;
        }
        actions.push(Action::ZeroInterconnection { child: i });
        refresh_controller(net, layer, i)?;
        actions.push(Action::RetuneController { unit: i });
    }
    for &i in &affected {
        actions.push(Action::ShrinkWBar { unit: i });
    }
    for k in shared_ids_of(net, j) {
        actions.push(Action::DropFromSk { k });
    }
    let time = step as f64 * net.ts;
    let reason = match &trigger {
        Trigger::Detection { decision } => format!(
            "fault detected by unit {} on component {} at step {}",
            decision.id, decision.component, decision.step
        ),
        Trigger::Manual => "manual request".into(),
        Trigger::Repair => "repair".into(),
    };
    net.log(Event {
        step,
        time,
        kind: EventKind::Unplug,
        target: j,
        affected: affected.iter().copied().collect(),
        reason,
    });
    for &i in &affected {
        net.log(Event {
            step,
            time,
            kind: EventKind::Retune,
            target: i,
            affected: vec![],
            reason: format!("unit {j} unplugged"),
        });
    }
    Ok(ReconfigPlan {
        step,
        trigger,
        target: j,
        affected,
        actions,
    })
}

/// Reconnects `j` at `init_state` (deviation coordinates) once repaired.
pub fn plug_in(
    net: &mut Network,
    layer: &mut ControlLayer,
    j: Id,
    init_state: &DVector<f64>,
    step: usize,
) -> Result<ReconfigPlan, PnpError> {
    if net.is_active(j) {
        return Err(PnpError::AlreadyActive(j));
    }
    let time = step as f64 * net.ts;
    let model = net.model(j)?.clone();
    let reject = |net: &mut Network, reason: String| {
        net.log(Event {
            step,
            time,
            kind: EventKind::Rejected,
            target: j,
            affected: vec![],
            reason: reason.clone(),
        });
        PnpError::Rejected { id: j, reason }
    };
    if init_state.len() != model.n() || init_state.iter().any(|v| !v.is_finite()) {
        return Err(reject(net, "initial state has the wrong size or is not finite".into()));
    }
    if !model.x_set.contains_point(init_state, SET_TOL) {
        return Err(reject(net, "initial state outside the state constraints".into()));
    }
    net.active.insert(j);
    refresh_controller(net, layer, j)?;
    let feasible = feasible_region_probe(layer.problems.get(&j).ok_or(PnpError::NoController(j))?, init_state);
    if !feasible {
        net.active.remove(&j);
        return Err(reject(net, "initial state outside the MPC feasible region".into()));
    }
    let affected: BTreeSet<Id> = neighbourhood(net, j)?
        .into_iter()
        .filter(|i| net.is_active(*i))
        .collect();
    let mut actions = vec![Action::ResetDetector { unit: j }];
    for &i in &model.children {
        if !net.is_active(i) {
            continue;
        }
        actions.push(Action::RestoreInterconnection { child: i });
        refresh_controller(net, layer, i)?;
        actions.push(Action::RetuneController { unit: i });
    }
    for &i in &affected {
        actions.push(Action::RestoreWBar { unit: i });
    }
    for k in shared_ids_of(net, j) {
        actions.push(Action::RestoreSk { k });
    }
    net.log(Event {
        step,
        time,
        kind: EventKind::PlugIn,
        target: j,
        affected: affected.iter().copied().collect(),
        reason: "repaired".into(),
    });
    for &i in &affected {
        net.log(Event {
            step,
            time,
            kind: EventKind::Retune,
            target: i,
            affected: vec![],
            reason: format!("unit {j} plugged in"),
        });
    }
    Ok(ReconfigPlan {
        step,
        trigger: Trigger::Repair,
        target: j,
        affected,
        actions,
    })
}

/// Minimum number of steps between two reconfigurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DwellGuard {
    pub min_steps: usize,
    pub last: Option<usize>,
}

impl DwellGuard {
    pub fn new(min_steps: usize) -> Self {
        DwellGuard { min_steps, last: None }
    }

    pub fn allows(&self, step: usize) -> bool {
        match self.last {
            Some(l) => step >= l + self.min_steps,
            None => true,
        }
    }

    pub fn record(&mut self, step: usize) {
        self.last = Some(step);
    }
}

/// What the policy wants to do at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Intent {
    Unplug { target: Id, trigger: Trigger },
    PlugIn { target: Id, state: DVector<f64> },
}

impl Intent {
    pub fn target(&self) -> Id {
        match self {
            Intent::Unplug { target, .. } | Intent::PlugIn { target, .. } => *target,
        }
    }
}

/// Unplug the owner of every first detection, replug on schedule. Intents
/// come out ordered by target id.
pub fn auto_policy(net: &Network, decisions: &[DetectionDecision], schedule: &[ReplugSpec], step: usize) -> Vec<Intent> {
    let mut unplug: BTreeMap<Id, DetectionDecision> = BTreeMap::new();
    for d in decisions.iter().filter(|d| d.verdict == Verdict::FaultDetected) {
        if net.is_active(d.owner) {
            unplug.entry(d.owner).or_insert_with(|| d.clone());
        }
    }
    let mut out: Vec<Intent> = unplug
        .into_iter()
        .map(|(target, decision)| Intent::Unplug {
            target,
            trigger: Trigger::Detection { decision },
        })
        .collect();
    let mut plugs: Vec<&ReplugSpec> = schedule.iter().filter(|r| r.step == step).collect();
    plugs.sort_by_key(|r| r.target);
    for r in plugs {
        out.push(Intent::PlugIn {
            target: r.target,
            state: r.state.clone(),
        });
    }
    out.sort_by_key(|i| i.target());
    out
}

/// Fingerprint of every unit's controller and detector parameters, used to
/// verify that a reconfiguration stays local.
pub fn parameter_snapshot(net: &Network, layer: &ControlLayer) -> BTreeMap<Id, String> {
    let mut out = BTreeMap::new();
    for (id, node) in &net.nodes {
        let ctrl = layer
            .problems
            .get(id)
            .map(|p| serde_json::to_string(&p.controller.to_artifact()).unwrap_or_default())
            .unwrap_or_default();
        let z_live: Vec<bool> = node.diag.z_layout.iter().map(|(j, _)| net.is_active(*j)).collect();
        let comps: Vec<bool> = (0..node.diag.n_tilde()).map(|p| net.component_live(*id, p)).collect();
        let members: Vec<(usize, Vec<(Id, usize)>)> = node
            .diag
            .layout
            .iter()
            .filter_map(|c| c.shared)
            .map(|k| (k, net.active_members(k)))
            .collect();
        out.insert(*id, format!("{ctrl}|{z_live:?}|{comps:?}|{members:?}"));
    }
    out
}
