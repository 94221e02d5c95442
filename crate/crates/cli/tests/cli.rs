use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"kind = "vdpo"
seed = 1
[vdpo]
m = 4
duration = 4.0
horizon = 10
[vdpo.fault]
target = 2
onset = 1.0
value = 8.0
repair = 2.0
replug_state = [0.5, 0.0]
"#;

fn pnpmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnpmpc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn design_simulate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let d = pnpmpc(&["design", "--config", &cfg, "--out", out_s]);
    assert_eq!(d.status.code(), Some(0), "{}", String::from_utf8_lossy(&d.stderr));
    assert!(out.join("design.json").exists());

    let s = pnpmpc(&["simulate", "--config", &cfg, "--out", out_s]);
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
    let stdout = String::from_utf8_lossy(&s.stdout);
    assert!(stdout.contains("detection: unit 2"), "{stdout}");
    for f in ["trace.csv", "events.jsonl", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let a = pnpmpc(&["analyze", "--config", &cfg, "--out", out_s]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let report = fs::read_to_string(out.join("analysis.json")).unwrap();
    assert!(report.contains("detectab"), "{report}");
}

#[test]
fn same_seed_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let s = pnpmpc(&["simulate", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(s.status.code(), Some(0));
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn steps_override_shortens_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    let s = pnpmpc(&["simulate", "--config", &cfg, "--steps", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    // Header plus 3 steps of 4 units with 2 components each.
    assert_eq!(csv.lines().count(), 1 + 3 * 4 * 2);
}

#[test]
fn infeasible_design_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("horizon = 10", "horizon = 10\nx2_bound = 0.01");
    let cfg = write_config(dir.path(), "tiny.toml", &text);
    let out = dir.path().join("o");
    let d = pnpmpc(&["design", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(2), "{}", String::from_utf8_lossy(&d.stderr));
}

#[test]
fn bad_config_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "kind = \"vdpo\"\nunknown_key = 3\n");
    assert_eq!(pnpmpc(&["design", "--config", &cfg]).status.code(), Some(4));
    let missing = dir.path().join("nope.toml");
    assert_eq!(pnpmpc(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(4));
}
