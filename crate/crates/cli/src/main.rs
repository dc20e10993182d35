use clap::{Args, Parser, Subcommand};
use magnls_cli::{emit_event, load_config, run, Mode};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration (single source of truth)
    #[arg(long)]
    config: PathBuf,
    /// dotted-path overrides, e.g. --set solver.seed=7
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// output directory (overrides output.directory in the config)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Subcritical constrained ground state
    Solve(Common),
    /// Per-ray limit problems and penalty-condition margins
    Penalty(Common),
    /// Profile synthesis / extraction / splitting verification
    Profiles(Common),
    /// Critical-exponent mode with the singular potential pair
    Critical(Common),
    /// Randomized gauge, diamagnetic, and growth-bound suites
    GaugeCheck(Common),
}

#[derive(Debug, Parser)]
#[command(name = "magnls", version, about = "Magnetic NLS ground-state toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Solve(c) => (Mode::Solve, c),
        Command::Penalty(c) => (Mode::Penalty, c),
        Command::Profiles(c) => (Mode::Profiles, c),
        Command::Critical(c) => (Mode::Critical, c),
        Command::GaugeCheck(c) => (Mode::GaugeCheck, c),
    };
    let config = match load_config(&common.config, &common.sets) {
        Ok(c) => c,
        Err(e) => {
            emit_event("error", "config.invalid", &e.to_string());
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let out = common
        .out
        .or_else(|| config.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match run(mode, &config, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_event("error", "run.failed", &e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
