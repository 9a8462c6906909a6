use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use trekport_core::config::{parse_config, ScenarioConfig};
use trekport_core::pipeline::{run_analysis, run_classification, run_full_pipeline, run_purification, PipelineError};
use trekport_core::selftest::{run_selftest, DEFAULT_SEED};
use trekport_core::trace::SCHEMA_VERSION;

#[derive(Parser)]
#[command(name = "trekport", version, about = "Concatenated partial teleportation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for seed sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Omit wall-clock timestamps from manifests.
    #[arg(long, global = true)]
    fixed_clock: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Full teleportation pipeline.
    Run,
    /// Pulse-order sensitivity of the configured dynamics.
    Classify,
    /// Purification by cold partial-swap pulses.
    Purify,
    /// Single-cycle teleportable subspace and entanglement report.
    Analyze,
    /// Acceptance suite.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Classify => "classify",
            Command::Purify => "purify",
            Command::Analyze => "analyze",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool_version: &'static str,
    command: &'static str,
    generated_at_unix: Option<u64>,
    config: &'a ScenarioConfig,
}

#[derive(Debug)]
enum Failure {
    Pipeline(PipelineError),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Pipeline(e) => e.exit_code() as u8,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Pipeline(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<trekport_core::TrekError> for Failure {
    fn from(e: trekport_core::TrekError) -> Self {
        Failure::Io(e.to_string())
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_manifest(dir: &Path, command: Command, config: &ScenarioConfig, fixed_clock: bool) -> Result<(), Failure> {
    let generated_at_unix = if fixed_clock {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        generated_at_unix,
        config,
    };
    write_json(dir, "manifest.json", &manifest)
}

fn execute(command: Command, config: &ScenarioConfig, fixed_clock: bool) -> Result<(), Failure> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    match command {
        Command::Run => {
            let report = run_full_pipeline(config)?;
            write_json(dir, "report.json", &report)?;
            report.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
            if let Some(trace) = &report.purification_trace {
                trace.write_csv(fs::File::create(dir.join("purify.csv"))?)?;
            }
            println!(
                "outcome {} (p = {:.6}); fidelity to conj(initial) {:.12}, to initial {:.12}",
                report.alice_final_index.map_or("none".to_string(), |p| p.to_string()),
                report.outcome_probability,
                report.fidelity_to_conjugate,
                report.fidelity_to_original
            );
            if let Some(o) = report.ordering {
                if o.printed_overlap < 1.0 - 1e-9 {
                    println!(
                        "note: printed forward ordering deviates from the inverse reconstruction (|overlap| {:.6})",
                        o.printed_overlap
                    );
                }
            }
        }
        Command::Classify => {
            let result = run_classification(config)?;
            write_json(dir, "classify.json", &result)?;
            println!("{:?} (residual {:.3e})", result.kind, result.residual);
        }
        Command::Purify => {
            let report = run_purification(config)?;
            write_json(dir, "purify.json", &report)?;
            report.trace.write_csv(fs::File::create(dir.join("purify.csv"))?)?;
            println!(
                "target overlap {:.12}, energy {:.12} (target {:.12}), reversibility {:.12}",
                report.summary.final_target_overlap,
                report.summary.final_energy,
                report.summary.target_energy,
                report.summary.reversibility
            );
        }
        Command::Analyze => {
            let report = run_analysis(config)?;
            write_json(dir, "analysis.json", &report)?;
            println!(
                "teleportable subspace dimension {}, Schmidt rank {}",
                report.subspace.dimension, report.schmidt.rank
            );
        }
        Command::Selftest => {
            let report = run_selftest(config.seed);
            for c in &report.criteria {
                println!("{}", c.line());
            }
            write_json(dir, "selftest.json", &report)?;
            write_manifest(dir, command, config, fixed_clock)?;
            if !report.all_passed() {
                return Err(Failure::Io("some acceptance criteria failed".into()));
            }
            return Ok(());
        }
    }
    write_manifest(dir, command, config, fixed_clock)
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    match &cli.config {
        Some(path) => Ok(parse_config(path).map_err(PipelineError::from)?),
        None if cli.command == Command::Selftest => {
            let mut c = ScenarioConfig::minimal(4, 2, 3);
            c.seed = DEFAULT_SEED;
            Ok(c)
        }
        None => Err(Failure::Pipeline(PipelineError::Config(
            trekport_core::config::ConfigError {
                field: "--config".into(),
                message: "a config file is required".into(),
            },
        ))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let runs: Vec<ScenarioConfig> = match &config.sweep_seeds {
        Some(seeds) if cli.command != Command::Selftest => seeds
            .iter()
            .map(|&s| config.with_seed(s, config.output_dir.join(format!("seed-{s}"))))
            .collect(),
        _ => vec![config.clone()],
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let results: Vec<Result<(), Failure>> = pool.install(|| {
        runs.par_iter()
            .map(|c| execute(cli.command, c, cli.fixed_clock))
            .collect()
    });
    let mut code = 0;
    for (c, r) in runs.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("error (seed {}): {e}", c.seed);
            code = code.max(e.exit_code());
        }
    }
    ExitCode::from(code)
}
