use std::fs;
use std::path::PathBuf;

use nalgebra::DVector;
use pnpmpc::cli::analyze_trace;
use pnpmpc::engine::{build_layer, design_all, simulate, EngineOptions};
use pnpmpc::geometry::parse_set_spec;
use pnpmpc::io::{
    parse_design_bundle, parse_run_config, preset, read_events_jsonl, read_trace_csv, write_events_jsonl,
    write_trace_csv, ConfigError, DesignBundle, ScenarioKind,
};
use pnpmpc::mpcx::MpcProblem;
use pnpmpc::scenarios::{build_vdpo, VdpoRingConfig};
use pnpmpc::setsynth::TubeController;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let b = fs::read(&p).unwrap();
            (p, b)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

fn small_run() -> pnpmpc::engine::RunResult {
    let mut cfg = VdpoRingConfig::default();
    cfg.m = 4;
    cfg.duration = 4.0;
    cfg.horizon = 10;
    if let Some(f) = cfg.fault.as_mut() {
        f.target = 2;
    }
    let sc = build_vdpo(&cfg).unwrap();
    let c = design_all(&sc)
        .unwrap()
        .into_iter()
        .map(|(id, o)| (id, o.controller().unwrap()))
        .collect();
    simulate(&sc, build_layer(&sc, &c, false).unwrap(), &EngineOptions::new(4)).unwrap()
}

#[test]
fn presets_parse() {
    let v = parse_run_config(preset("vdpo").unwrap()).unwrap();
    assert_eq!(v.kind, ScenarioKind::Vdpo);
    assert_eq!(v.scenario().unwrap().net.nodes.len(), 20);
    let p = parse_run_config(preset("pns").unwrap()).unwrap();
    assert_eq!(p.scenario().unwrap().net.nodes.len(), 5);
    assert!(preset("nope").is_none());
}

#[test]
fn bad_configs_are_rejected() {
    let cases = [
        "kind = \"vdpo\"\nbogus = 1\n",
        "kind = \"other\"\n",
        "kind = \"vdpo\"\n[pns]\nts = 1.0\n",
        "kind = \"vdpo\"\n[vdpo]\nts = nan\n",
        "kind = \"vdpo\"\n[vdpo]\nm = 100000\n",
        "kind = \"pns\"\n[pns]\nduration = -1.0\n",
        "kind = ",
    ];
    for c in cases {
        assert!(parse_run_config(c).is_err(), "accepted: {c}");
    }
    let two = parse_run_config("kind = \"vdpo\"\n[vdpo]\nm = 2\n").unwrap();
    assert!(matches!(two.scenario(), Err(ConfigError::Scenario(_))));
}

#[test]
fn trace_csv_round_trips_exactly() {
    let r = small_run();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &r.trace).unwrap();
    let back = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(back, r.trace);
    let mut again = Vec::new();
    write_trace_csv(&mut again, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn trace_reader_rejects_bad_input() {
    assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
    let r = small_run();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &r.trace[..2]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let broken = lines[1].replacen("0,", "x,", 1);
    lines[1] = &broken;
    assert!(read_trace_csv(lines.join("\n").as_bytes()).is_err());
}

#[test]
fn events_round_trip() {
    let r = small_run();
    assert!(!r.events.is_empty());
    let mut buf = Vec::new();
    write_events_jsonl(&mut buf, &r.events).unwrap();
    assert_eq!(read_events_jsonl(buf.as_slice()).unwrap(), r.events);
    assert!(read_events_jsonl("{\"step\":1}\n".as_bytes()).is_err());
}

#[test]
fn design_artifacts_round_trip() {
    let sc = build_vdpo(&VdpoRingConfig::default()).unwrap();
    let m = sc.net.model(1).unwrap();
    let parents = m.parents.iter().map(|j| (*j, sc.net.model(*j).unwrap().x_set.clone())).collect();
    let c = pnpmpc::setsynth::design_controller(m, &parents, &sc.design[&1]).unwrap().controller().unwrap();
    let bundle = DesignBundle {
        scenario: "vdpo".into(),
        source: String::new(),
        controllers: vec![c.to_artifact()],
        failures: vec![],
    };
    let text = bundle.to_json();
    let back = parse_design_bundle(&text).unwrap();
    assert_eq!(back, bundle);
    let c2: TubeController = back.controllers().unwrap().remove(0);
    let p1 = MpcProblem::new(m, c.clone()).unwrap();
    let p2 = MpcProblem::new(m, c2).unwrap();
    let x = DVector::from_vec(vec![1.0, -0.5]);
    assert_eq!(p1.solve(&x).unwrap(), p2.solve(&x).unwrap());

    let mut dup = bundle.clone();
    dup.controllers.push(dup.controllers[0].clone());
    assert!(dup.controllers().is_err());
    assert!(parse_design_bundle("{\"scenario\": 1}").is_err());
}

#[test]
fn analysis_of_a_healthy_trace_finds_nothing() {
    let mut cfg = VdpoRingConfig::default();
    cfg.m = 4;
    cfg.duration = 2.0;
    cfg.fault = None;
    let sc = build_vdpo(&cfg).unwrap();
    let c = design_all(&sc)
        .unwrap()
        .into_iter()
        .map(|(id, o)| (id, o.controller().unwrap()))
        .collect();
    let r = simulate(&sc, build_layer(&sc, &c, false).unwrap(), &EngineOptions::new(0)).unwrap();
    let a = analyze_trace(&r.trace, 0.1);
    assert_eq!(a.verdict, "none detectable");
    assert!(a.detectability.is_empty());
}

#[test]
fn fuzz_corpora_replay_cleanly() {
    for (p, b) in corpus("run_config") {
        let text = std::str::from_utf8(&b).unwrap();
        let cfg = parse_run_config(text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.scenario().unwrap();
    }
    for (p, b) in corpus("set_spec") {
        parse_set_spec(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("trace_csv") {
        let t = read_trace_csv(b.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let mut out = Vec::new();
        write_trace_csv(&mut out, &t).unwrap();
        assert_eq!(read_trace_csv(out.as_slice()).unwrap(), t);
    }
    for (p, b) in corpus("events_jsonl") {
        read_events_jsonl(b.as_slice()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in corpus("design_bundle") {
        let bundle = parse_design_bundle(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        bundle.controllers().unwrap();
    }
}
