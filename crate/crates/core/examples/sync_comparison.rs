//! Trigger relay against NTP-style synchronization and an uncompensated
//! baseline, across jitter levels with 10 ms one-way asymmetry.
//!
//! `cargo run --release --example sync_comparison [seeds]`

use syncap::harness::{run_sync_comparison, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::with_preset("easy");
    config.sync_compare.seeds = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let (report, _) = run_sync_comparison(&config, 1)?;
    let summary = report.table("summary").expect("summary table");
    print!("{}", summary.to_csv()?);
    print!("{}", report.summary());
    Ok(())
}
