//! `nqsdyn`: run real-time evolutions of neural quantum states from a
//! configuration file.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::config::RunConfig;
use crate::output::{write_metadata, Metadata, SCHEMA_VERSION};

/// Exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_DQPT: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] nqsdyn::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            // the integrator could not resolve the dynamics even at its
            // smallest step, the typical symptom of a nonanalytic point
            CliError::Run(nqsdyn::Error::StepUnderflow { .. }) => EXIT_DQPT,
            CliError::Run(_) | CliError::Io(_) | CliError::Check(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Parser)]
#[command(name = "nqsdyn", version, about = "Real-time evolution of neural quantum states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the variational equations of motion.
    EvolveTdvp(RunArgs),
    /// Step-wise infidelity minimization against an approximate propagator.
    EvolveGlobal(RunArgs),
    /// Exact evolution of the initial product state on a fixed time grid.
    BenchmarkEd(RunArgs),
    /// Compare Markov-chain estimates on the initial state with exact sums.
    SampleCheck(RunArgs),
    /// Parse and validate a configuration without running it.
    ValidateConfig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "output")]
    output: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, env = "NQSDYN_THREADS")]
    threads: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn load_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("nqsdyn: {e}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::EvolveTdvp(a) => ("evolve-tdvp", a),
        Command::EvolveGlobal(a) => ("evolve-global", a),
        Command::BenchmarkEd(a) => ("benchmark-ed", a),
        Command::SampleCheck(a) => ("sample-check", a),
        Command::ValidateConfig(a) => ("validate-config", a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(&CliError::Config(format!("threads: {e}")));
        }
    }
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    if let Command::ValidateConfig(_) = cli.command {
        return match commands::validate_config(&cfg) {
            Ok(summary) => {
                println!("{}: ok ({summary})", args.config.display());
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        };
    }
    let started_at = now();
    let run = Run {
        cfg,
        output: args.output.clone(),
        resume: args.resume.clone(),
    };
    let result = match cli.command {
        Command::EvolveTdvp(_) => commands::evolve_tdvp(&run),
        Command::EvolveGlobal(_) => commands::evolve_global_run(&run),
        Command::BenchmarkEd(_) => commands::benchmark_ed(&run),
        Command::SampleCheck(_) => commands::sample_check(&run),
        Command::ValidateConfig(_) => unreachable!("handled above"),
    };
    let (status, code, error, n_records) = match &result {
        Ok(s) => ("ok", 0, None, s.n_records),
        Err(e) => ("failed", e.exit_code(), Some(e.to_string()), 0),
    };
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        program: "nqsdyn",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        config: args.config.display().to_string(),
        seed: run.cfg.seed,
        threads: rayon::current_num_threads(),
        resumed_from: args.resume.as_ref().map(|p| p.display().to_string()),
        started_at,
        finished_at: now(),
        status: status.to_string(),
        exit_code: code.into(),
        error,
        n_records,
    };
    // config errors before the output directory exists leave no metadata
    if run.output.is_dir() {
        if let Err(e) = write_metadata(&run.output, &meta) {
            return report(&e);
        }
    }
    match result {
        Ok(s) => {
            if s.n_records > 0 {
                eprintln!("nqsdyn: {} records in {}", s.n_records, run.output.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
