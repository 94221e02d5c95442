use std::collections::{BTreeMap, BTreeSet};

use pnpmpc::engine::{build_layer, design_all, simulate, EngineOptions, RunResult};
use pnpmpc::io::write_trace_csv;
use pnpmpc::netmodel::{EventKind, Id};
use pnpmpc::scenarios::{build_pns, build_vdpo, PnsConfig, Scenario, VdpoRingConfig};
use pnpmpc::setsynth::{design_controller, DesignFailure, DesignOutcome, TubeController};

fn controllers(sc: &Scenario) -> BTreeMap<Id, TubeController> {
    design_all(sc)
        .unwrap()
        .into_iter()
        .map(|(id, o)| (id, o.controller().expect("feasible design")))
        .collect()
}

fn run(sc: &Scenario, c: &BTreeMap<Id, TubeController>, opts: EngineOptions, retighten: bool) -> RunResult {
    simulate(sc, build_layer(sc, c, retighten).unwrap(), &opts).unwrap()
}

fn small_ring() -> VdpoRingConfig {
    let mut cfg = VdpoRingConfig::default();
    cfg.m = 6;
    cfg.duration = 6.0;
    if let Some(f) = cfg.fault.as_mut() {
        f.target = 3;
    }
    cfg
}

#[test]
fn identical_seed_gives_identical_csv() {
    let sc = build_vdpo(&small_ring()).unwrap();
    let c = controllers(&sc);
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let r = run(&sc, &c, EngineOptions::new(9), false);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &r.trace).unwrap();
        bytes.push(buf);
    }
    assert_eq!(bytes[0], bytes[1]);
    let other = run(&sc, &c, EngineOptions::new(10), false);
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &other.trace).unwrap();
    assert_ne!(bytes[0], buf);
}

#[test]
fn every_subsystem_is_traced_at_every_step() {
    let sc = build_vdpo(&small_ring()).unwrap();
    let c = controllers(&sc);
    let r = run(&sc, &c, EngineOptions::new(1), false);
    let per_step: usize = sc.net.nodes.values().map(|n| n.diag.n_tilde()).sum();
    for t in 0..sc.steps {
        assert_eq!(r.trace.iter().filter(|x| x.step == t).count(), per_step, "step {t}");
    }
    assert!(r.trace.windows(2).all(|w| w[0].time <= w[1].time));
}

#[test]
fn zero_steps_gives_an_empty_trace() {
    let sc = build_vdpo(&small_ring()).unwrap();
    let c = controllers(&sc);
    let mut opts = EngineOptions::new(0);
    opts.steps = Some(0);
    let r = run(&sc, &c, opts, false);
    assert!(r.trace.is_empty() && r.events.is_empty());
}

#[test]
fn pns_reconfiguration_is_local() {
    let sc = build_pns(&PnsConfig::default()).unwrap();
    let c = controllers(&sc);
    let r = run(&sc, &c, EngineOptions::new(3), false);
    assert_eq!(r.plans.len(), 1);
    let p = &r.plans[0];
    assert_eq!(p.plan.target, 4);
    assert_eq!(p.plan.affected, BTreeSet::from([3, 5]));
    assert!(p.changed.is_subset(&BTreeSet::from([3, 4, 5])), "{:?}", p.changed);
    assert!(!p.changed.contains(&1) && !p.changed.contains(&2));
}

#[test]
fn dwell_guard_defers_the_replug() {
    let sc = build_vdpo(&small_ring()).unwrap();
    let c = controllers(&sc);
    let mut opts = EngineOptions::new(0);
    opts.dwell_min = 20;
    let r = run(&sc, &c, opts, false);
    let (_, t_un) = r.summary.unplugged[0];
    let (_, t_in) = r.summary.plugged[0];
    assert_eq!(t_un, 26);
    assert_eq!(t_in, t_un + 20);
}

#[test]
fn replug_outside_the_feasible_region_is_rejected() {
    let mut cfg = small_ring();
    if let Some(f) = cfg.fault.as_mut() {
        f.replug_state = [2.99, 1.99];
    }
    let sc = build_vdpo(&cfg).unwrap();
    let c = controllers(&sc);
    let r = run(&sc, &c, EngineOptions::new(0), false);
    assert!(r.summary.plugged.is_empty());
    assert_eq!(r.summary.rejected, vec![(3, 35)]);
    assert!(r.events.iter().any(|e| e.kind == EventKind::Rejected && e.target == 3));
}

#[test]
fn retightened_neighbours_still_regulate() {
    let sc = build_vdpo(&small_ring()).unwrap();
    let c = controllers(&sc);
    let r = run(&sc, &c, EngineOptions::new(2), true);
    // Only the faulty unit may lose feasibility.
    assert!(r.summary.infeasible.iter().all(|(id, _)| *id == 3), "{:?}", r.summary.infeasible);
    assert!(r.summary.constraint_violations.is_empty());
    assert_eq!(r.summary.retuned, BTreeSet::from([2, 4]));
}

#[test]
fn tiny_state_box_fails_at_step_iii() {
    let mut cfg = small_ring();
    cfg.x2_bound = 0.01;
    let sc = build_vdpo(&cfg).unwrap();
    let m = sc.net.model(1).unwrap();
    let parents = m.parents.iter().map(|j| (*j, sc.net.model(*j).unwrap().x_set.clone())).collect();
    match design_controller(m, &parents, &sc.design[&1]).unwrap() {
        DesignOutcome::Infeasible(DesignFailure::StepIii { .. }) => {}
        other => panic!("expected a step III failure, got {other:?}"),
    }
}

#[test]
fn healthy_variant_has_no_faults() {
    let sc = build_vdpo(&small_ring()).unwrap().healthy();
    assert!(sc.faults.is_empty() && sc.replugs.is_empty());
    let c = controllers(&sc);
    let r = run(&sc, &c, EngineOptions::new(5), false);
    assert!(r.summary.detections.is_empty());
    assert!(r.events.is_empty());
}
