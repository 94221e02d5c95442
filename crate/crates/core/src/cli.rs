//! Design, simulate and analyze commands behind the `pnpmpc` binary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{build_layer, design_all, shared_envelopes, simulate, EngineError, EngineOptions, RunSummary, TraceRecord};
use crate::fdx::{detectability_check, EnvelopeReport};
use crate::io::{
    parse_design_bundle, parse_run_config, preset, read_trace_csv, write_events_jsonl, write_trace_csv, ArtifactError,
    ConfigError, DesignBundle, RunConfig, ScenarioKind,
};
use crate::netmodel::Id;
use crate::scenarios::Scenario;
use crate::setsynth::{DesignFailure, DesignOutcome, SynthError, TubeController};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}", infeasible_message(.0))]
    DesignInfeasible(Vec<(Id, DesignFailure)>),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Mismatch(String),
}

fn infeasible_message(f: &[(Id, DesignFailure)]) -> String {
    let parts: Vec<String> = f.iter().map(|(id, e)| format!("subsystem {id}: {e}")).collect();
    format!("design infeasible: {}", parts.join("; "))
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 4,
            CliError::DesignInfeasible(_) => 2,
            CliError::Engine(e) if e.is_certificate_violation() => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Artifact(ArtifactError::Io(e))
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub retighten: bool,
    pub dwell_min: Option<usize>,
}

/// A config file path, or the name of a built-in preset.
pub fn load_config(arg: &str) -> Result<RunConfig, CliError> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| ConfigError::Invalid(format!("{arg}: {e}")))?
    } else if let Some(p) = preset(arg) {
        p.to_string()
    } else {
        return Err(ConfigError::Invalid(format!("{arg}: no such file or preset")).into());
    };
    Ok(parse_run_config(&text)?)
}

pub fn apply_overrides(mut cfg: RunConfig, ov: &Overrides) -> RunConfig {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(s) = ov.steps {
        cfg.steps = Some(s);
    }
    if let Some(o) = &ov.out {
        cfg.out = Some(o.display().to_string());
    }
    cfg.retighten |= ov.retighten;
    if let Some(d) = ov.dwell_min {
        cfg.dwell_min = d;
    }
    cfg
}

pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.out.clone().unwrap_or_else(|| "out".into()))
}

/// Scenario section as TOML; ties a design file to the config it came from.
fn design_source(cfg: &RunConfig) -> String {
    let res = match cfg.kind {
        ScenarioKind::Vdpo => toml::to_string(&cfg.vdpo.clone().unwrap_or_default()),
        ScenarioKind::Pns => toml::to_string(&cfg.pns.clone().unwrap_or_default()),
    };
    res.unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub scenario: String,
    pub lines: Vec<String>,
    pub failures: Vec<(Id, DesignFailure)>,
}

fn design_bundle(cfg: &RunConfig, scenario: &Scenario) -> Result<(DesignBundle, DesignReport), CliError> {
    let outcomes = design_all(scenario)?;
    let mut controllers = Vec::new();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for (id, o) in outcomes {
        match o {
            DesignOutcome::Feasible(c) => {
                lines.push(format!(
                    "subsystem {id}: feasible (mRPI terms {}, alpha {:.2e}, |Z| facets {})",
                    c.mrpi_terms,
                    c.mrpi_alpha,
                    c.z.num_halfspaces()
                ));
                controllers.push(c.to_artifact());
            }
            DesignOutcome::Infeasible(f) => {
                lines.push(format!("subsystem {id}: infeasible at {f}"));
                failures.push((id, f));
            }
        }
    }
    let bundle = DesignBundle {
        scenario: scenario.name.clone(),
        source: design_source(cfg),
        controllers,
        failures: failures.clone(),
    };
    let report = DesignReport {
        scenario: scenario.name.clone(),
        lines,
        failures,
    };
    Ok((bundle, report))
}

/// Designs every controller and writes `<out>/design.json`.
pub fn cmd_design(cfg: &RunConfig) -> Result<DesignReport, CliError> {
    let scenario = cfg.scenario()?;
    let (bundle, report) = design_bundle(cfg, &scenario)?;
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("design.json"), bundle.to_json())?;
    if !report.failures.is_empty() {
        return Err(CliError::DesignInfeasible(report.failures));
    }
    Ok(report)
}

/// Controllers from `<out>/design.json` when it matches the config,
/// otherwise a fresh design (which is then written there).
fn controllers_for(cfg: &RunConfig, scenario: &Scenario) -> Result<BTreeMap<Id, TubeController>, CliError> {
    let dir = out_dir(cfg);
    let path = dir.join("design.json");
    let source = design_source(cfg);
    let bundle = match fs::read_to_string(&path) {
        Ok(text) => {
            let b = parse_design_bundle(&text)?;
            if b.scenario == scenario.name && b.source == source {
                b
            } else {
                let (b, _) = design_bundle(cfg, scenario)?;
                fs::write(&path, b.to_json())?;
                b
            }
        }
        Err(_) => {
            let (b, _) = design_bundle(cfg, scenario)?;
            fs::create_dir_all(&dir)?;
            fs::write(&path, b.to_json())?;
            b
        }
    };
    if !bundle.failures.is_empty() {
        return Err(CliError::DesignInfeasible(bundle.failures));
    }
    let mut out = BTreeMap::new();
    for c in bundle.controllers()? {
        out.insert(c.id, c);
    }
    if out.keys().copied().collect::<Vec<_>>() != scenario.net.ids().collect::<Vec<_>>() {
        return Err(CliError::Mismatch("design.json does not cover the scenario's subsystems".into()));
    }
    Ok(out)
}

/// Runs the closed loop and writes trace, events and summary files.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let scenario = cfg.scenario()?;
    let controllers = controllers_for(cfg, &scenario)?;
    let layer = build_layer(&scenario, &controllers, cfg.retighten)?;
    let opts = EngineOptions {
        seed: cfg.seed,
        steps: cfg.steps,
        dwell_min: cfg.dwell_min,
        auto_policy: true,
    };
    let run = simulate(&scenario, layer, &opts)?;
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;
    let trace: Vec<TraceRecord> = if cfg.per_component_traces {
        run.trace
    } else {
        run.trace.into_iter().filter(|r| r.owner == r.subsystem).collect()
    };
    write_trace_csv(BufWriter::new(File::create(dir.join("trace.csv"))?), &trace)?;
    write_events_jsonl(BufWriter::new(File::create(dir.join("events.jsonl"))?), &run.events)?;
    let summary = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(run.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityRow {
    pub subsystem: Id,
    pub component: usize,
    pub onset: usize,
    /// Earliest step satisfying the detectability inequality.
    pub earliest: Option<usize>,
    /// First step the simulated detector fired on this component.
    pub simulated: Option<usize>,
}

/// Mean and peak share of the threshold spent on input-dependent terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputShare {
    pub subsystem: Id,
    pub component: usize,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub verdict: String,
    pub detectability: Vec<DetectabilityRow>,
    pub input_share: Vec<InputShare>,
    pub envelopes: Vec<EnvelopeReport>,
}

/// Detectability and threshold breakdown of a recorded trace.
pub fn analyze_trace(trace: &[TraceRecord], lambda: f64) -> AnalysisReport {
    let mut series: BTreeMap<(Id, usize), Vec<&TraceRecord>> = BTreeMap::new();
    for r in trace {
        series.entry((r.subsystem, r.component)).or_default().push(r);
    }
    let steps = trace.iter().map(|r| r.step + 1).max().unwrap_or(0);
    let mut detectability = Vec::new();
    let mut input_share = Vec::new();
    for ((id, comp), rows) in &series {
        let mut phi = vec![0.0; steps];
        let mut thr = vec![f64::INFINITY; steps];
        let mut simulated = None;
        let mut shares = Vec::new();
        for r in rows {
            if !r.plugged {
                continue;
            }
            phi[r.step] = r.fault_phi.unwrap_or(0.0);
            thr[r.step] = r.threshold;
            if simulated.is_none() && r.verdict == "fault_detected" {
                simulated = Some(r.step);
            }
            if r.threshold > 0.0 {
                shares.push(r.threshold_input / r.threshold);
            }
        }
        if !shares.is_empty() {
            input_share.push(InputShare {
                subsystem: *id,
                component: *comp,
                mean: shares.iter().sum::<f64>() / shares.len() as f64,
                max: shares.iter().copied().fold(0.0, f64::max),
            });
        }
        let Some(onset) = phi.iter().position(|v| *v != 0.0) else {
            continue;
        };
        detectability.push(DetectabilityRow {
            subsystem: *id,
            component: *comp,
            onset,
            earliest: detectability_check(&phi, lambda, &thr, onset),
            simulated,
        });
    }
    // The inequality is sufficient only, so a detection without it is possible.
    let verdict = if detectability.iter().any(|d| d.earliest.is_some()) {
        "detectable"
    } else if detectability.is_empty() {
        "none detectable"
    } else {
        "fault present; detectability condition not met"
    }
    .to_string();
    AnalysisReport {
        verdict,
        detectability,
        input_share,
        envelopes: shared_envelopes(trace, lambda),
    }
}

/// Reads `<out>/trace.csv` and writes `<out>/analysis.json`.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalysisReport, CliError> {
    let scenario = cfg.scenario()?;
    let dir = out_dir(cfg);
    let trace = read_trace_csv(BufReader::new(File::open(dir.join("trace.csv"))?))?;
    for r in &trace {
        let ok = scenario
            .net
            .nodes
            .get(&r.subsystem)
            .is_some_and(|n| r.component < n.diag.layout.len());
        if !ok {
            return Err(CliError::Mismatch(format!(
                "trace row for subsystem {} component {} does not match the config",
                r.subsystem, r.component
            )));
        }
    }
    let report = analyze_trace(&trace, scenario.fd.lambda);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(dir.join("analysis.json"), text + "\n")?;
    Ok(report)
}
