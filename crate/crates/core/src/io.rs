//! Run configuration, built-in presets and artifact persistence.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::TraceRecord;
use crate::netmodel::{Event, Id};
use crate::scenarios::{build_pns, build_vdpo, PnsConfig, Scenario, ScenarioError, VdpoRingConfig};
use crate::setsynth::{ControllerArtifact, DesignFailure, SynthError, TubeController};

pub const VDPO_PRESET: &str = include_str!("../presets/vdpo.toml");
pub const PNS_PRESET: &str = include_str!("../presets/pns.toml");

/// Built-in configuration text by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "vdpo" => Some(VDPO_PRESET),
        "pns" => Some(PNS_PRESET),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error on line {line}: {message}")]
    Json { line: usize, message: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid artifact: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Vdpo,
    Pns,
}

fn yes() -> bool {
    true
}

/// Top-level TOML document for the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the duration implied by the scenario.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub retighten: bool,
    #[serde(default)]
    pub dwell_min: usize,
    /// When false only the components a subsystem owns are traced.
    #[serde(default = "yes")]
    pub per_component_traces: bool,
    #[serde(default)]
    pub vdpo: Option<VdpoRingConfig>,
    #[serde(default)]
    pub pns: Option<PnsConfig>,
}

const MAX_UNITS: usize = 500;
const MAX_HORIZON: usize = 200;
const MAX_STEPS: usize = 1_000_000;

fn finite(name: &str, vals: &[f64]) -> Result<(), ConfigError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be finite")))
    }
}

fn duration_steps(duration: f64, ts: f64) -> Result<(), ConfigError> {
    if !(duration >= 0.0) || !(ts > 0.0) || duration / ts > MAX_STEPS as f64 {
        return Err(ConfigError::Invalid("duration / ts out of range".into()));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if matches!(self.steps, Some(s) if s > MAX_STEPS) {
            return Err(ConfigError::Invalid("too many steps".into()));
        }
        match self.kind {
            ScenarioKind::Vdpo => {
                if self.pns.is_some() {
                    return Err(ConfigError::Invalid("[pns] section in a vdpo config".into()));
                }
                let c = self.vdpo.clone().unwrap_or_default();
                if c.m > MAX_UNITS || c.horizon > MAX_HORIZON {
                    return Err(ConfigError::Invalid("ring size or horizon too large".into()));
                }
                finite(
                    "vdpo parameters",
                    &[
                        c.alpha_bar, c.beta_bar, c.ts, c.g0, c.g2, c.x1_bound, c.x2_bound, c.u_bound, c.rho_bound,
                        c.lambda, c.q[0], c.q[1], c.r, c.duration, c.init_spread[0], c.init_spread[1],
                    ],
                )?;
                if let Some(f) = &c.fault {
                    finite("fault", &[f.onset, f.value, f.repair.unwrap_or(0.0), f.replug_state[0], f.replug_state[1]])?;
                    duration_steps(f.onset, c.ts)?;
                    duration_steps(f.repair.unwrap_or(0.0), c.ts)?;
                }
                duration_steps(c.duration, c.ts)
            }
            ScenarioKind::Pns => {
                if self.vdpo.is_some() {
                    return Err(ConfigError::Invalid("[vdpo] section in a pns config".into()));
                }
                let c = self.pns.clone().unwrap_or_default();
                if c.areas.len() > MAX_UNITS || c.horizon > MAX_HORIZON || c.ties.len() > MAX_UNITS * 4 {
                    return Err(ConfigError::Invalid("network or horizon too large".into()));
                }
                let mut vals = vec![c.ts, c.u_bound, c.rho_bound, c.lambda, c.q_eps, c.r, c.duration];
                vals.extend(c.x_bounds);
                vals.extend(c.q);
                for a in &c.areas {
                    vals.extend([a.h, a.d, a.tt, a.tg, a.r]);
                }
                for t in &c.ties {
                    vals.push(t.p);
                }
                for l in &c.loads {
                    vals.extend([l.time, l.delta]);
                    duration_steps(l.time, c.ts)?;
                }
                if let Some(f) = &c.fault {
                    vals.extend([f.onset, f.h]);
                    duration_steps(f.onset, c.ts)?;
                }
                finite("pns parameters", &vals)?;
                duration_steps(c.duration, c.ts)
            }
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        Ok(match self.kind {
            ScenarioKind::Vdpo => build_vdpo(&self.vdpo.clone().unwrap_or_default())?,
            ScenarioKind::Pns => build_pns(&self.pns.clone().unwrap_or_default())?,
        })
    }
}

/// Parses and validates a TOML run configuration.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_trace_csv<W: Write>(w: W, records: &[TraceRecord]) -> Result<(), ArtifactError> {
    let mut wr = csv::WriterBuilder::new().has_headers(true).from_writer(w);
    if records.is_empty() {
        wr.write_record(TRACE_HEADER)?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

const TRACE_HEADER: &[&str] = &[
    "step",
    "time",
    "subsystem",
    "component",
    "owner",
    "owner_component",
    "shared_id",
    "plugged",
    "true_state",
    "measured",
    "estimate",
    "error",
    "residual",
    "threshold",
    "threshold_input",
    "pick",
    "nominal",
    "tube_error",
    "input",
    "aux_input",
    "mpc_status",
    "cost",
    "iterations",
    "fault_phi",
    "verdict",
];

/// Reads a trace; time must be non-decreasing.
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRecord>, ArtifactError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(ArtifactError::Invalid("unexpected trace header".into()));
    }
    let mut out: Vec<TraceRecord> = Vec::new();
    for rec in rd.deserialize() {
        let rec: TraceRecord = rec?;
        if let Some(prev) = out.last() {
            if rec.step < prev.step {
                return Err(ArtifactError::Invalid(format!("step {} after step {}", rec.step, prev.step)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_events_jsonl<W: Write>(mut w: W, events: &[Event]) -> Result<(), ArtifactError> {
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| ArtifactError::Json {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// One event per non-empty line.
pub fn read_events_jsonl<R: BufRead>(r: R) -> Result<Vec<Event>, ArtifactError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|e| ArtifactError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Design report and artifacts for a whole scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBundle {
    pub scenario: String,
    /// Scenario section of the config the design was computed from.
    pub source: String,
    pub controllers: Vec<ControllerArtifact>,
    pub failures: Vec<(Id, DesignFailure)>,
}

impl DesignBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design bundle serializes")
    }

    /// Rebuilds the controllers, checking ids are unique.
    pub fn controllers(&self) -> Result<Vec<TubeController>, ArtifactError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for a in &self.controllers {
            if !seen.insert(a.id) {
                return Err(ArtifactError::Invalid(format!("duplicate controller {}", a.id)));
            }
            out.push(TubeController::from_artifact(a)?);
        }
        Ok(out)
    }
}

pub fn parse_design_bundle(text: &str) -> Result<DesignBundle, ArtifactError> {
    serde_json::from_str(text).map_err(|e| ArtifactError::Json {
        line: e.line(),
        message: e.to_string(),
    })
}
