//! Trigger rate against a shared uplink cap: merged captures arrive every
//! 1/φ until the offered load exceeds the cap, then the queue grows.

use syncap::harness::{run_frequency_sweep, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig::with_preset("easy");
    let (report, points) = run_frequency_sweep(&config, 1)?;
    println!(
        "{:>6} {:>7} {:>6} {:>10} {:>10} {:>9}",
        "phi", "devices", "load", "gap [s]", "ref [s]", "lag [s]"
    );
    for p in &points {
        println!(
            "{:>6} {:>7} {:>6.2} {:>10.4} {:>10.4} {:>9.3}",
            p.frequency_hz,
            p.devices,
            p.load,
            p.mean_gap_s,
            1.0 / p.frequency_hz,
            p.last_lag_s
        );
    }
    let model = report.table("transport_model").expect("model table");
    print!("{}", model.to_csv()?);
    Ok(())
}
