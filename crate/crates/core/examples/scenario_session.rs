//! Runs one end-to-end simulated session (trigger relay, delay
//! compensation, streamed records, merge) and prints its metrics.
//!
//! `cargo run --release --example scenario_session [scenario.toml]`

use syncap::sim::{run_session, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = match std::env::args().nth(1) {
        Some(path) => ScenarioConfig::load(path.as_ref())?,
        None => ScenarioConfig::from_toml_str("preset = \"easy\"\nduration_s = 9.9\n")?,
    };
    println!(
        "scenario {} ({}), {} devices at {} Hz",
        scenario.name,
        scenario.hash(),
        scenario.devices,
        scenario.frequency_hz
    );
    let out = run_session(&scenario)?;
    let m = &out.metrics;
    println!("triggers {}, merged {}, complete {}", m.triggers, m.merged, m.complete);
    println!(
        "completeness {:.4}, client delivery {:.4}",
        m.mean_completeness, m.client_delivery
    );
    println!(
        "capture spread {:.3} ± {:.3} ms (max {:.3}) over {} triggers",
        m.spread.mean_ms, m.spread.std_ms, m.spread.max_ms, m.spread.count
    );
    println!("relay {:?}", m.relay);
    println!(
        "per-device RTT means {:?} ms",
        out.plan.as_ref().map(|p| &p.mean_rtt_ms)
    );
    Ok(())
}
