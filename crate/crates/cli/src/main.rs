use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnpmpc::cli::{apply_overrides, cmd_analyze, cmd_design, cmd_simulate, load_config, CliError, Overrides};

#[derive(Parser)]
#[command(name = "pnpmpc", version, about = "Plug-and-play tube MPC with distributed fault detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Design every local controller and write <out>/design.json.
    Design(Common),
    /// Run the closed loop and write trace.csv, events.jsonl and summary.json.
    Simulate(Common),
    /// Detectability and threshold breakdown of <out>/trace.csv.
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// Config file, or a preset name (vdpo, pns).
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute tubes of retuned neighbours instead of reusing them.
    #[arg(long)]
    retighten: bool,
    /// Minimum number of steps between two reconfigurations.
    #[arg(long)]
    dwell_min: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (kind, c) = match cli.cmd {
        Cmd::Design(c) => ("design", c),
        Cmd::Simulate(c) => ("simulate", c),
        Cmd::Analyze(c) => ("analyze", c),
    };
    let ov = Overrides {
        seed: c.seed,
        steps: c.steps,
        out: c.out,
        retighten: c.retighten,
        dwell_min: c.dwell_min,
    };
    let cfg = apply_overrides(load_config(&c.config)?, &ov);
    match kind {
        "design" => {
            let report = cmd_design(&cfg)?;
            for l in &report.lines {
                println!("{l}");
            }
        }
        "simulate" => {
            let s = cmd_simulate(&cfg)?;
            println!("scenario {} seed {} steps {}", s.scenario, s.seed, s.steps);
            for d in &s.detections {
                println!(
                    "detection: unit {} component {} (owner {}) at step {}",
                    d.id, d.component, d.owner, d.step
                );
            }
            for (id, t) in &s.unplugged {
                println!("unplugged {id} at step {t}");
            }
            for (id, t) in &s.plugged {
                println!("plugged in {id} at step {t}");
            }
            for (id, t) in &s.rejected {
                println!("plug-in of {id} rejected at step {t}");
            }
            println!("retuned {:?}", s.retuned);
            println!(
                "infeasible steps {}, constraint violations {}, tube violations {}",
                s.infeasible.len(),
                s.constraint_violations.len(),
                s.tube_violations.len()
            );
        }
        _ => {
            let r = cmd_analyze(&cfg)?;
            println!("{}", r.verdict);
            for d in &r.detectability {
                println!(
                    "subsystem {} component {}: onset {}, earliest detectable {:?}, simulated {:?}",
                    d.subsystem, d.component, d.onset, d.earliest, d.simulated
                );
            }
            for e in &r.envelopes {
                println!("shared {}: envelope ratio {:.3} holds {}", e.k, e.max_ratio, e.holds);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
