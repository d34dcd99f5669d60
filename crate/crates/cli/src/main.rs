use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handover::harness::{
    compare_modes, export_trajectory, run_scenario, ExportFormat, HarnessError, RunLog,
};
use handover::orchestrator::HandoverMode;
use handover::scenario::{Override, Scenario};

const EXIT_FAULT: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Runs robot-to-human handover scenarios in simulated time.
#[derive(Parser)]
#[command(name = "handover", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario in one mode and write the run log (JSON).
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, env = "HANDOVER_MODE", default_value = "adaptive")]
        mode: HandoverMode,
        /// Run log path; stdout if omitted.
        #[arg(long, env = "HANDOVER_OUT")]
        out: Option<PathBuf>,
    },
    /// Run both modes on identical inputs and print a side-by-side report.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Report path; stdout if omitted.
        #[arg(long, env = "HANDOVER_OUT")]
        out: Option<PathBuf>,
        /// Emit the report as JSON instead of a text table.
        #[arg(long)]
        json: bool,
    },
    /// Export the motion samples of a run as CSV or JSON.
    Export {
        /// Existing run log to export; otherwise the scenario is run first.
        #[arg(long, env = "HANDOVER_LOG", conflicts_with = "scenario")]
        log: Option<PathBuf>,
        #[arg(long, env = "HANDOVER_SCENARIO")]
        scenario: Option<PathBuf>,
        #[arg(long, env = "HANDOVER_MODE", default_value = "adaptive")]
        mode: HandoverMode,
        #[arg(long, env = "HANDOVER_SEED")]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = "HANDOVER_OUT")]
        out: PathBuf,
        /// csv or json; inferred from the output extension if omitted.
        #[arg(long, env = "HANDOVER_FORMAT")]
        format: Option<ExportFormat>,
    },
    /// Parse and resolve a scenario without running it.
    ValidateConfig {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, env = "HANDOVER_SCENARIO")]
    scenario: PathBuf,
    /// Noise RNG seed; shorthand for --override noise.rng_seed=N.
    #[arg(long, env = "HANDOVER_SEED")]
    seed: Option<u64>,
    /// Set a scenario field by dotted key, e.g. planner.alpha_s=0.05.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(String),
    Fault(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load(path: &Path, seed: Option<u64>, raw: &[String]) -> Result<Scenario, Failure> {
    let mut overrides = raw
        .iter()
        .map(|r| Override::parse(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = seed {
        overrides.push(Override::seed(seed));
    }
    Scenario::load(path, &overrides).map_err(|e| Failure::Config(e.to_string()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn outcome(code: i32, summary: String) -> Result<(), Failure> {
    if code == 0 {
        eprintln!("{summary}");
        Ok(())
    } else {
        Err(Failure::Fault(summary))
    }
}

fn summarize(log: &RunLog) -> String {
    format!(
        "{} [{}]: {} after {} ticks, replans={}, alpha scalings={}",
        log.header.scenario_id,
        log.header.mode,
        log.terminal_state,
        log.ticks.len(),
        log.metrics.n_replans,
        log.metrics.n_alpha_scalings
    )
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { scenario, mode, out } => {
            let sc = load(&scenario.scenario, scenario.seed, &scenario.overrides)?;
            let log = run_scenario(&sc, mode)?;
            write_or_print(out.as_deref(), &log.to_json())?;
            outcome(log.exit_code(), summarize(&log))
        }
        Command::Compare { scenario, out, json } => {
            let sc = load(&scenario.scenario, scenario.seed, &scenario.overrides)?;
            let report = compare_modes(&sc)?;
            let text = if json { report.to_json() } else { report.render() };
            write_or_print(out.as_deref(), &text)?;
            outcome(
                report.exit_code(),
                format!(
                    "{}: adaptive {}, static {}",
                    report.scenario_id, report.adaptive.terminal_state, report.static_mode.terminal_state
                ),
            )
        }
        Command::Export {
            log,
            scenario,
            mode,
            seed,
            overrides,
            out,
            format,
        } => {
            let log = match (log, scenario) {
                (Some(path), _) => RunLog::read(&path)?,
                (None, Some(path)) => run_scenario(&load(&path, seed, &overrides)?, mode)?,
                (None, None) => return Err(Failure::Config("export needs --log or --scenario".into())),
            };
            let format = format.unwrap_or_else(|| ExportFormat::from_path(&out));
            let n = export_trajectory(&log, format, &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
            Ok(())
        }
        Command::ValidateConfig { scenario } => {
            let sc = load(&scenario.scenario, scenario.seed, &scenario.overrides)?;
            println!(
                "ok: {} task={} samples={} events={} digest={}",
                sc.id,
                sc.task,
                sc.stream.len(),
                sc.events.len(),
                sc.digest
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Fault(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_FAULT)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
