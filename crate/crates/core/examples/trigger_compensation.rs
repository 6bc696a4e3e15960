//! Delay compensation from measured round trips: every device ends up
//! capturing at the same instant when one-way delays are half the RTT.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syncap::sync::{compensation_plan, mean_rtt, DeviceRole, RttMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clients = 5;
    let base: Vec<f64> = (0..clients).map(|_| rng.gen_range(8.0..60.0)).collect();
    let rows: Vec<Vec<f64>> = base
        .iter()
        .map(|b| (0..20).map(|_| b + rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let means = mean_rtt(&RttMatrix::from_rows(&rows)?)?;
    let plan = compensation_plan(&means)?;

    println!(
        "max mean RTT {:.3} ms, host waits {:.3} ms",
        plan.max_rtt_ms, plan.host_delay_ms
    );
    let send_ms = 1000.0;
    let host_capture = send_ms + plan.delay_ms(DeviceRole::Host)?;
    println!("host captures at {host_capture:.3} ms");
    for (a, l) in means.iter().enumerate() {
        // the trigger takes half the mean RTT to arrive, then the client waits Δt_a
        let arrival = send_ms + l / 2.0;
        let capture = arrival + plan.delay_ms(DeviceRole::Client(a))?;
        println!(
            "client {a}: rtt {l:7.3} ms, arrives {arrival:9.3}, waits {:7.3}, captures {capture:9.3} (off by {:+.1e} ms)",
            plan.client_delay_ms[a],
            capture - host_capture
        );
    }
    Ok(())
}
