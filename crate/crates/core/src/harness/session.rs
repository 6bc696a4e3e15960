use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::report::num;
use super::{seed_list, ExperimentConfig, ExperimentKind, HarnessError, Report, Table};
use crate::dataplane::load_index;
use crate::geometry::Skeleton3D;
use crate::sim::{run_session_with, RunOptions, SessionOutput};

#[derive(Serialize)]
struct TruthLine<'a> {
    trigger_id: u32,
    host_capture_ns: i64,
    skeleton: &'a Skeleton3D,
}

fn write_truth(dir: &Path, out: &SessionOutput) -> Result<(), HarnessError> {
    let mut text = String::new();
    for t in &out.truth {
        let line = TruthLine {
            trigger_id: t.trigger_id,
            host_capture_ns: t.host_capture_ns,
            skeleton: &t.skeleton,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    fs::write(dir.join("truth.jsonl"), text)?;
    Ok(())
}

/// End-to-end sessions: devices, relay and data manager for the configured
/// duration, with the merged store, ground truth and metrics persisted.
pub fn run_scenario(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<Report, HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let seeds = seed_list(seed, config.run.seeds);
    let persist = config.run.persist;

    let results: Vec<(u64, SessionOutput, f64, Option<Vec<u32>>)> = seeds
        .par_iter()
        .map(|&s| {
            let scenario = crate::sim::ScenarioConfig {
                seed: s,
                ..base.clone()
            };
            let dir = out.join(format!("session-{s}"));
            if persist && dir.exists() {
                // stale artifacts of an earlier run of this same config
                fs::remove_dir_all(&dir)?;
            }
            let options = RunOptions {
                store_root: persist.then(|| dir.join("store")),
                discard_payloads: true,
            };
            let start = Instant::now();
            let output = run_session_with(&scenario, &options)?;
            let wall = start.elapsed().as_secs_f64();
            let stored = if persist {
                write_truth(&dir, &output)?;
                fs::write(dir.join("scenario.toml"), scenario.to_toml())?;
                Some(load_index(&dir.join("store"))?.iter().map(|e| e.trigger_id).collect())
            } else {
                None
            };
            Ok((s, output, wall, stored))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut report = Report::new(ExperimentKind::Run, hash.clone(), seeds.clone());
    let mut metrics = Table::new(
        "metrics",
        &[
            "scenario",
            "scheme",
            "triggers",
            "merged",
            "complete",
            "mean_completeness",
            "client_delivery",
            "spread_mean_ms",
            "spread_std_ms",
            "spread_max_ms",
            "relay_forwarded",
            "stale_triggers",
            "stream_dropped",
            "rejected",
            "corrupt_frames",
            "merge_late",
        ],
    );
    let mut spreads = Table::new("spreads", &["trigger_id", "spread_ms"]);
    for (s, o, wall, stored) in &results {
        let m = &o.metrics;
        metrics.push(
            s,
            &hash,
            vec![
                o.config.name.clone(),
                super::scheme_label(o.config.scheme),
                m.triggers.to_string(),
                m.merged.to_string(),
                m.complete.to_string(),
                num(m.mean_completeness),
                num(m.client_delivery),
                num(m.spread.mean_ms),
                num(m.spread.std_ms),
                num(m.spread.max_ms),
                m.relay.forwarded.to_string(),
                m.stale_triggers.to_string(),
                m.stream_dropped.to_string(),
                m.rejected.to_string(),
                m.corrupt_frames.to_string(),
                m.merge_late.to_string(),
            ],
        );
        for (id, ms) in &o.spreads_ms {
            spreads.push(s, &hash, vec![id.to_string(), num(*ms)]);
        }
        report.timings.push((format!("session seed {s}"), *wall));
        if persist {
            report.artifacts.push(out.join(format!("session-{s}")));
        }

        if o.config.network.trigger_loss == 0.0 {
            report.check(
                format!("seed {s}: every trigger merged complete"),
                m.merged == m.triggers && m.complete == m.triggers,
                format!("{} triggers, {} merged, {} complete", m.triggers, m.merged, m.complete),
            );
            if let Some(ids) = stored {
                let expected: Vec<u32> = (0..m.triggers as u32).collect();
                report.check(
                    format!("seed {s}: persisted trigger ids are 0..N-1"),
                    *ids == expected,
                    format!("{} stored", ids.len()),
                );
            }
        } else {
            report.check(
                format!("seed {s}: client delivery tracks trigger loss"),
                (m.client_delivery - (1.0 - o.config.network.trigger_loss)).abs() <= 0.02,
                format!(
                    "delivery {} at loss {}",
                    m.client_delivery, o.config.network.trigger_loss
                ),
            );
        }
    }
    report.tables.push(metrics);
    report.tables.push(spreads);
    Ok(report)
}
