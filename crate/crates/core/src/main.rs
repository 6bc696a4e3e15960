use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use syncap::harness::{check_output_dir, run_experiment, ExperimentConfig, ExperimentKind, HarnessError};

#[derive(Parser)]
#[command(
    name = "syncap",
    version,
    about = "Seeded experiments over the simulated capture testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// End-to-end sessions with persisted records, ground truth and metrics
    Run(Common),
    /// Capture spread per sync scheme and jitter level
    SyncCompare(Common),
    /// Merged-capture inter-arrival gaps over trigger rate and device count
    FreqSweep(Common),
    /// Skeleton reconstruction, re-projection error and bundle adjustment modes
    Reconstruct(Common),
    /// Re-projection error against simulated miss-detection rates
    MissdetSweep(Common),
    /// Visual hull carving, meshes and volumes per threshold
    Volumetric(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; defaults over the easy preset when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; multi-seed experiments use seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for CSV tables, manifest and artifacts
    #[arg(long)]
    out: PathBuf,
}

fn execute(kind: ExperimentKind, args: &Common) -> Result<bool, HarnessError> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::with_preset("easy"),
    };
    check_output_dir(&args.out, &config.hash()?)?;
    let report = run_experiment(kind, &config, args.seed, &args.out)?;
    report.write(&args.out)?;
    print!("{}", report.summary());
    let passed = report.passed();
    println!(
        "{kind}: {} ({} checks, config {})",
        if passed { "PASS" } else { "FAIL" },
        report.checks.len(),
        report.config_hash
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Run(a) => (ExperimentKind::Run, a),
        Command::SyncCompare(a) => (ExperimentKind::SyncCompare, a),
        Command::FreqSweep(a) => (ExperimentKind::FreqSweep, a),
        Command::Reconstruct(a) => (ExperimentKind::Reconstruct, a),
        Command::MissdetSweep(a) => (ExperimentKind::MissdetSweep, a),
        Command::Volumetric(a) => (ExperimentKind::Volumetric, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
