use std::time::Instant;

use rayon::prelude::*;

use super::report::num;
use super::{scheme_label, seed_label, seed_list, ExperimentConfig, ExperimentKind, HarnessError, Report, Table};
use crate::dataplane::PayloadKind;
use crate::sim::{run_session_with, RunOptions, ScenarioConfig, SpreadSummary};
use crate::sync::SchemeKind;

/// Capture spread of one (scheme, jitter, seed) session.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncCell {
    pub scheme: SchemeKind,
    pub jitter_ms: f64,
    pub seed: u64,
    pub spread: SpreadSummary,
}

fn cell_scenario(
    base: &ScenarioConfig,
    config: &ExperimentConfig,
    scheme: SchemeKind,
    jitter: f64,
    seed: u64,
) -> ScenarioConfig {
    let s = &config.sync_compare;
    let mut c = base.clone();
    c.seed = seed;
    c.scheme = scheme;
    c.devices = s.devices;
    c.duration_s = s.duration_s;
    c.network.jitter_ms = jitter;
    c.network.asymmetry_ms = s.asymmetry_ms;
    c.network.client_extra_ms.clear();
    c.noise.miss_devices.retain(|d| *d < s.devices);
    // spreads only need timestamps, keep payloads tiny
    c.payload.kind = PayloadKind::Image;
    c.payload.image_bytes = 64;
    c
}

/// Scheme × jitter grid, averaged over seeds. Checks that the relay and
/// averaged-NTP schemes agree within one σ and that both beat the
/// uncompensated baseline by at least 25% under asymmetric latency.
pub fn run_sync_comparison(config: &ExperimentConfig, seed: u64) -> Result<(Report, Vec<SyncCell>), HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let s = &config.sync_compare;
    let seeds = seed_list(seed, s.seeds);
    let seed_slice = seeds.as_slice();
    let grid: Vec<(SchemeKind, f64, u64)> = s
        .schemes
        .iter()
        .flat_map(|k| {
            s.jitter_ms
                .iter()
                .flat_map(move |j| seed_slice.iter().map(move |sd| (*k, *j, *sd)))
        })
        .collect();

    let start = Instant::now();
    let cells: Vec<SyncCell> = grid
        .par_iter()
        .map(|&(scheme, jitter_ms, sd)| {
            let scenario = cell_scenario(&base, config, scheme, jitter_ms, sd);
            let out = run_session_with(
                &scenario,
                &RunOptions {
                    store_root: None,
                    discard_payloads: true,
                },
            )?;
            Ok(SyncCell {
                scheme,
                jitter_ms,
                seed: sd,
                spread: out.metrics.spread,
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut report = Report::new(ExperimentKind::SyncCompare, hash.clone(), seeds.clone());
    report
        .timings
        .push(("sync comparison".into(), start.elapsed().as_secs_f64()));
    let mut runs = Table::new(
        "runs",
        &["scheme", "jitter_ms", "triggers", "mean_ms", "std_ms", "max_ms"],
    );
    for c in &cells {
        runs.push(
            c.seed,
            &hash,
            vec![
                scheme_label(c.scheme),
                num(c.jitter_ms),
                c.spread.count.to_string(),
                num(c.spread.mean_ms),
                num(c.spread.std_ms),
                num(c.spread.max_ms),
            ],
        );
    }

    let label = seed_label(&seeds);
    let mut summary = Table::new("summary", &["scheme", "jitter_ms", "mean_ms", "std_ms", "seed_std_ms"]);
    let mean_of = |scheme: SchemeKind, jitter: f64| -> Option<(f64, f64, f64)> {
        let sel: Vec<&SyncCell> = cells
            .iter()
            .filter(|c| c.scheme == scheme && c.jitter_ms == jitter)
            .collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len() as f64;
        let mean = sel.iter().map(|c| c.spread.mean_ms).sum::<f64>() / n;
        let within = sel.iter().map(|c| c.spread.std_ms).sum::<f64>() / n;
        let between = (sel.iter().map(|c| (c.spread.mean_ms - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some((mean, within, between))
    };
    for &scheme in &s.schemes {
        for &jitter in &s.jitter_ms {
            if let Some((m, w, b)) = mean_of(scheme, jitter) {
                summary.push(
                    &label,
                    &hash,
                    vec![scheme_label(scheme), num(jitter), num(m), num(w), num(b)],
                );
            }
        }
    }

    for &jitter in &s.jitter_ms {
        let relay = mean_of(SchemeKind::TriggerRelay, jitter).map(|v| v.0);
        let ntp = mean_of(SchemeKind::NtpAveraged, jitter).map(|v| v.0);
        let none = mean_of(SchemeKind::Uncompensated, jitter).map(|v| v.0);
        if let (Some(r), Some(n)) = (relay, ntp) {
            report.check(
                format!("jitter {jitter} ms: relay and averaged NTP within one sigma"),
                (r - n).abs() <= jitter.max(1e-6),
                format!("relay {r:.3} ms, ntp {n:.3} ms"),
            );
        }
        if let Some(u) = none.filter(|_| s.asymmetry_ms > 0.0) {
            for (name, v) in [("relay", relay), ("averaged NTP", ntp)] {
                if let Some(v) = v {
                    report.check(
                        format!("jitter {jitter} ms: {name} beats uncompensated by 25%"),
                        v <= 0.75 * u,
                        format!("{v:.3} ms vs {u:.3} ms"),
                    );
                }
            }
        }
    }
    report.tables.push(runs);
    report.tables.push(summary);
    Ok((report, cells))
}
