//! Builders for the two benchmarks: a ring of coupled van der Pol
//! oscillators and a five-area power network with primary control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdx::EstimatorForm;
use crate::geometry::{GeometryError, HPolytope};
use crate::lqr;
use crate::netmodel::{
    build_network, FaultMap, FaultMode, FaultSpec, Id, LoadSchedule, MatchedMap, NetError, Network, SharingSpec,
    StateMap, SubsystemModel,
};
use crate::setsynth::{DesignOptions, Feedback};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Operating point per unit of local load: `x_s = x d`, `u_s = u d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trim {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

/// Scheduled reconnection of a repaired subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplugSpec {
    pub target: Id,
    pub step: usize,
    pub state: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub lambda: f64,
    pub form: EstimatorForm,
    pub samples: usize,
    pub inflation: f64,
}

/// Everything the engine needs to run one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub net: Network,
    pub design: BTreeMap<Id, DesignOptions>,
    pub trims: BTreeMap<Id, Trim>,
    pub faults: Vec<FaultSpec>,
    pub replugs: Vec<ReplugSpec>,
    pub fd: FdSettings,
    pub steps: usize,
    /// Spread of the random initial states (0 keeps the origin).
    pub init_spread: Vec<f64>,
}

impl Scenario {
    /// Operating point `(x_s, u_s)` of `id` at step `t`.
    pub fn operating_point(&self, id: Id, t: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        let trim = self.trims.get(&id)?;
        let d = self.net.loads.value(id, t);
        Some((&trim.x * d, &trim.u * d))
    }

    /// Initial states: the operating point plus a seeded uniform offset.
    /// The same scenario without faults or scheduled replugs.
    pub fn healthy(&self) -> Scenario {
        let mut s = self.clone();
        s.faults.clear();
        s.replugs.clear();
        s
    }

    pub fn initial_states(&self, seed: u64) -> StateMap {
        let mut out = StateMap::new();
        for (id, node) in &self.net.nodes {
            let n = node.model.n();
            let mut x = self
                .operating_point(*id, 0)
                .map(|(x, _)| x)
                .unwrap_or_else(|| DVector::zeros(n));
            if self.init_spread.iter().any(|s| *s > 0.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1a17);
                rng.set_stream(*id as u64);
                for c in 0..n {
                    let s = self.init_spread.get(c).copied().unwrap_or(0.0);
                    let r: f64 = rng.gen_range(-1.0..=1.0);
                    x[c] += r * s;
                }
            }
            out.insert(*id, x);
        }
        out
    }
}

fn time_to_step(t: f64, ts: f64) -> usize {
    (t / ts).round().max(0.0) as usize
}

fn design_opts(q: &[f64], r: f64, horizon: usize, feedback: Feedback, eps: f64) -> DesignOptions {
    let n = q.len();
    let mut qm = DMatrix::from_diagonal(&DVector::from_column_slice(q));
    qm += DMatrix::identity(n, n) * eps;
    let mut o = DesignOptions::new(qm, DMatrix::from_element(1, 1, r), horizon);
    o.feedback = feedback;
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpoFault {
    pub target: Id,
    /// Seconds.
    pub onset: f64,
    pub value: f64,
    /// Seconds; the repaired oscillator is replugged at this time.
    pub repair: Option<f64>,
    pub replug_state: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpoRingConfig {
    pub m: usize,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub ts: f64,
    pub g0: f64,
    pub g2: f64,
    pub x1_bound: f64,
    pub x2_bound: f64,
    pub u_bound: f64,
    pub rho_bound: f64,
    pub lambda: f64,
    pub q: [f64; 2],
    pub r: f64,
    pub horizon: usize,
    pub duration: f64,
    pub init_spread: [f64; 2],
    pub fault: Option<VdpoFault>,
}

impl Default for VdpoRingConfig {
    fn default() -> Self {
        VdpoRingConfig {
            m: 20,
            alpha_bar: 0.1,
            beta_bar: -0.3,
            ts: 0.1,
            g0: 0.4,
            g2: 0.1,
            x1_bound: 3.0,
            x2_bound: 2.0,
            u_bound: 8.0,
            rho_bound: 0.1,
            lambda: 0.1,
            q: [100.0, 10.0],
            r: 1.0,
            horizon: 30,
            duration: 10.0,
            init_spread: [0.5, 0.5],
            fault: Some(VdpoFault {
                target: 11,
                onset: 2.5,
                value: 8.0,
                repair: Some(3.5),
                replug_state: [2.5, 0.0],
            }),
        }
    }
}

fn ring_neighbors(i: Id, m: usize) -> (Id, Id) {
    let prev = if i == 1 { m } else { i - 1 };
    let next = if i == m { 1 } else { i + 1 };
    (prev, next)
}

/// Euler-discretized vdPO ring with ids `1..=M`.
pub fn build_vdpo(cfg: &VdpoRingConfig) -> Result<Scenario, ScenarioError> {
    if cfg.m < 3 {
        return Err(ScenarioError::Invalid("a ring needs at least 3 oscillators".into()));
    }
    if !(cfg.ts > 0.0) || !(cfg.lambda > 0.0 && cfg.lambda < 1.0) || cfg.horizon == 0 {
        return Err(ScenarioError::Invalid("ts, lambda or horizon out of range".into()));
    }
    let ts = cfg.ts;
    let mut models = Vec::with_capacity(cfg.m);
    for i in 1..=cfg.m {
        let (prev, next) = ring_neighbors(i, cfg.m);
        let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -(1.0 + 2.0 * cfg.beta_bar), 0.0]);
        let a = DMatrix::identity(2, 2) + ac * ts;
        let b = DMatrix::from_row_slice(2, 1, &[0.0, ts]);
        let coupling = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, ts * cfg.beta_bar, ts * cfg.beta_bar]);
        models.push(SubsystemModel {
            id: i,
            a,
            b,
            matched: MatchedMap::VdpoActuator {
                alpha_bar: cfg.alpha_bar,
                g0: cfg.g0,
                g2: cfg.g2,
            },
            coupling,
            exogenous: None,
            x_set: HPolytope::symmetric_box(&[cfg.x1_bound, cfg.x2_bound])?,
            u_set: HPolytope::symmetric_box(&[cfg.u_bound])?,
            o_set: HPolytope::symmetric_box(&[cfg.rho_bound, cfg.rho_bound])?,
            parents: vec![prev, next],
            children: vec![prev, next],
            psi_layout: vec![(prev, 0), (next, 0)],
        });
    }
    let rho: BTreeMap<Id, f64> = (1..=cfg.m).map(|i| (i, cfg.rho_bound)).collect();
    let net = build_network(models, &SharingSpec::default(), &rho, LoadSchedule::default(), ts)?;
    let opts = design_opts(&cfg.q, cfg.r, cfg.horizon, Feedback::State, 0.0);
    let design = (1..=cfg.m).map(|i| (i, opts.clone())).collect();
    let mut faults = Vec::new();
    let mut replugs = Vec::new();
    if let Some(f) = &cfg.fault {
        if !net.nodes.contains_key(&f.target) {
            return Err(ScenarioError::Invalid(format!("fault target {} not in ring", f.target)));
        }
        let onset = time_to_step(f.onset, ts);
        let until = f.repair.map(|r| time_to_step(r, ts));
        if let Some(u) = until {
            if u <= onset {
                return Err(ScenarioError::Invalid("repair must follow the fault".into()));
            }
            replugs.push(ReplugSpec {
                target: f.target,
                step: u,
                state: DVector::from_column_slice(&f.replug_state),
            });
        }
        faults.push(FaultSpec {
            target: f.target,
            onset,
            until,
            mode: FaultMode::ActuatorOverride,
            map: FaultMap::Override(DVector::from_element(1, f.value)),
        });
    }
    Ok(Scenario {
        name: "vdpo".into(),
        net,
        design,
        trims: BTreeMap::new(),
        faults,
        replugs,
        fd: FdSettings {
            lambda: cfg.lambda,
            form: EstimatorForm::ErrorConsistent,
            samples: 10_000,
            inflation: 0.1,
        },
        steps: time_to_step(cfg.duration, ts),
        init_spread: cfg.init_spread.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnsArea {
    pub id: Id,
    pub h: f64,
    pub d: f64,
    pub tt: f64,
    pub tg: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieLine {
    pub a: Id,
    pub b: Id,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    /// Seconds.
    pub time: f64,
    pub area: Id,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnsFault {
    pub area: Id,
    pub onset: f64,
    /// Inertia constant after the fault.
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnsConfig {
    pub areas: Vec<PnsArea>,
    pub ties: Vec<TieLine>,
    /// Extra components each area monitors: `(area, [(owner, component)])`.
    pub sharing: Vec<(Id, Vec<(Id, usize)>)>,
    pub ts: f64,
    /// Bounds on the deviations of `(Δθ, Δω, ΔP_m, ΔP_v)`.
    pub x_bounds: [f64; 4],
    pub u_bound: f64,
    pub rho_bound: f64,
    pub lambda: f64,
    pub q: [f64; 4],
    pub q_eps: f64,
    pub r: f64,
    pub horizon: usize,
    pub duration: f64,
    pub loads: Vec<LoadStep>,
    pub fault: Option<PnsFault>,
}

impl Default for PnsConfig {
    fn default() -> Self {
        let hs = [6.0, 5.0, 5.5, 8.0, 4.5];
        PnsConfig {
            areas: hs
                .iter()
                .enumerate()
                .map(|(k, h)| PnsArea {
                    id: k + 1,
                    h: *h,
                    d: 1.0,
                    tt: 0.5,
                    tg: 0.2,
                    r: 0.05,
                })
                .collect(),
            ties: [(1, 2), (2, 3), (2, 5), (3, 4), (4, 5)]
                .iter()
                .map(|&(a, b)| TieLine { a, b, p: 1.0 })
                .collect(),
            sharing: vec![
                (2, vec![(1, 0), (3, 0), (5, 0)]),
                (3, vec![(4, 0)]),
                (5, vec![(4, 0)]),
            ],
            ts: 1.0,
            x_bounds: [0.1, 0.2, 3.0, 3.0],
            u_bound: 2.0,
            rho_bound: 1e-3,
            lambda: 0.5,
            q: [1000.0, 3000.0, 0.0, 0.0],
            q_eps: 1e-3,
            r: 1.0,
            horizon: 15,
            duration: 100.0,
            loads: [
                (5.0, 1, 0.10),
                (15.0, 2, -0.16),
                (20.0, 1, -0.22),
                (20.0, 2, 0.12),
                (20.0, 3, -0.10),
                (30.0, 3, 0.10),
                (40.0, 4, 0.08),
                (40.0, 5, -0.10),
            ]
            .iter()
            .map(|&(time, area, delta)| LoadStep { time, area, delta })
            .collect(),
            fault: Some(PnsFault {
                area: 4,
                onset: 60.0,
                h: 1.0,
            }),
        }
    }
}

struct AreaModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    l: DVector<f64>,
    c: DMatrix<f64>,
}

/// Continuous area model discretized by exact zero-order hold, with `u`,
/// `ΔP_L` and the neighbours' `Δθ` held over the sample.
fn discretize_area(area: &PnsArea, ties: &[(Id, f64)], ts: f64) -> AreaModel {
    let h2 = 2.0 * area.h;
    let sp: f64 = ties.iter().map(|(_, p)| p).sum();
    let ac = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            1.0,
            0.0,
            0.0,
            -sp / h2,
            -area.d / h2,
            1.0 / h2,
            0.0,
            0.0,
            0.0,
            -1.0 / area.tt,
            1.0 / area.tt,
            0.0,
            -1.0 / (area.r * area.tg),
            0.0,
            -1.0 / area.tg,
        ],
    );
    let bc = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 1.0 / area.tg]);
    let lc = DMatrix::from_row_slice(4, 1, &[0.0, -1.0 / h2, 0.0, 0.0]);
    let mut cc = DMatrix::zeros(4, ties.len());
    for (q, (_, p)) in ties.iter().enumerate() {
        cc[(1, q)] = p / h2;
    }
    let (a, ex) = lqr::zoh(&ac, &[&bc, &lc, &cc], ts);
    AreaModel {
        a,
        b: ex[0].clone(),
        l: ex[1].column(0).into_owned(),
        c: ex[2].clone(),
    }
}

/// Five-area power network (or any area/tie-line layout in the same form).
pub fn build_pns(cfg: &PnsConfig) -> Result<Scenario, ScenarioError> {
    if !(cfg.ts > 0.0) || !(cfg.lambda > 0.0 && cfg.lambda < 1.0) || cfg.horizon == 0 {
        return Err(ScenarioError::Invalid("ts, lambda or horizon out of range".into()));
    }
    let ids: Vec<Id> = cfg.areas.iter().map(|a| a.id).collect();
    for area in &cfg.areas {
        if [area.h, area.d, area.tt, area.tg, area.r].iter().any(|v| !(*v > 0.0)) {
            return Err(ScenarioError::Invalid(format!("area {} has a non-positive constant", area.id)));
        }
    }
    let mut nbrs: BTreeMap<Id, Vec<(Id, f64)>> = ids.iter().map(|i| (*i, Vec::new())).collect();
    for t in &cfg.ties {
        if t.a == t.b || !nbrs.contains_key(&t.a) || !nbrs.contains_key(&t.b) || !(t.p > 0.0) {
            return Err(ScenarioError::Invalid(format!("bad tie line {}-{}", t.a, t.b)));
        }
        if nbrs[&t.a].iter().any(|(j, _)| *j == t.b) {
            return Err(ScenarioError::Invalid(format!("duplicate tie line {}-{}", t.a, t.b)));
        }
        nbrs.get_mut(&t.a).unwrap().push((t.b, t.p));
        nbrs.get_mut(&t.b).unwrap().push((t.a, t.p));
    }
    for v in nbrs.values_mut() {
        v.sort_by_key(|(j, _)| *j);
    }
    let x_set = HPolytope::symmetric_box(&cfg.x_bounds)?;
    let u_set = HPolytope::symmetric_box(&[cfg.u_bound])?;
    let o_set = HPolytope::symmetric_box(&[cfg.rho_bound; 4])?;
    let mut models = Vec::new();
    let mut trims = BTreeMap::new();
    let mut discr = BTreeMap::new();
    for area in &cfg.areas {
        let ties = &nbrs[&area.id];
        let dm = discretize_area(area, ties, cfg.ts);
        let parents: Vec<Id> = ties.iter().map(|(j, _)| *j).collect();
        models.push(SubsystemModel {
            id: area.id,
            a: dm.a.clone(),
            b: dm.b.clone(),
            matched: MatchedMap::Unit,
            coupling: dm.c.clone(),
            exogenous: Some(dm.l.clone()),
            x_set: x_set.clone(),
            u_set: u_set.clone(),
            o_set: o_set.clone(),
            parents: parents.clone(),
            children: parents.clone(),
            psi_layout: parents.iter().map(|j| (*j, 0)).collect(),
        });
        // Frequency restored, tie-line flows unchanged: the generator picks
        // up the whole local load.
        trims.insert(
            area.id,
            Trim {
                x: DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]),
                u: DVector::from_element(1, 1.0),
            },
        );
        discr.insert(area.id, dm);
    }
    let mut loads = LoadSchedule::default();
    for l in &cfg.loads {
        if !nbrs.contains_key(&l.area) {
            return Err(ScenarioError::Invalid(format!("load on unknown area {}", l.area)));
        }
        loads.steps.push((time_to_step(l.time, cfg.ts), l.area, l.delta));
    }
    let sharing = SharingSpec {
        extra: cfg.sharing.iter().cloned().collect(),
    };
    let rho: BTreeMap<Id, f64> = ids.iter().map(|i| (*i, cfg.rho_bound)).collect();
    let net = build_network(models, &sharing, &rho, loads, cfg.ts)?;

    let mut faults = Vec::new();
    if let Some(f) = &cfg.fault {
        let area = cfg
            .areas
            .iter()
            .find(|a| a.id == f.area)
            .ok_or_else(|| ScenarioError::Invalid(format!("fault on unknown area {}", f.area)))?;
        if !(f.h > 0.0) {
            return Err(ScenarioError::Invalid("faulty inertia must be positive".into()));
        }
        let nominal = &discr[&f.area];
        let faulty = discretize_area(&PnsArea { h: f.h, ..area.clone() }, &nbrs[&f.area], cfg.ts);
        faults.push(FaultSpec {
            target: f.area,
            onset: time_to_step(f.onset, cfg.ts),
            until: None,
            mode: FaultMode::AdditiveState,
            map: FaultMap::LinearDrift {
                da: &faulty.a - &nominal.a,
                db: &faulty.b - &nominal.b,
                dc: &faulty.c - &nominal.c,
                de: &faulty.l - &nominal.l,
            },
        });
    }
    let opts = design_opts(&cfg.q, cfg.r, cfg.horizon, Feedback::Output, cfg.q_eps);
    Ok(Scenario {
        name: "pns".into(),
        net,
        design: ids.iter().map(|i| (*i, opts.clone())).collect(),
        trims,
        faults,
        replugs: Vec::new(),
        fd: FdSettings {
            lambda: cfg.lambda,
            form: EstimatorForm::ErrorConsistent,
            samples: 10_000,
            inflation: 0.1,
        },
        steps: time_to_step(cfg.duration, cfg.ts),
        init_spread: vec![0.0; 4],
    })
}
