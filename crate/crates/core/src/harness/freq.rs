use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::num;
use super::{seed_list, ExperimentConfig, ExperimentKind, HarnessError, Report, Table};
use crate::dataplane::{encode_frame, CaptureRecord, PayloadKind};
use crate::geometry::{Intrinsics, Pose};
use crate::sim::{run_session_with, RunOptions, ScenarioConfig};

/// Inter-arrival statistics of one (φ, devices, seed) session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqPoint {
    pub frequency_hz: f64,
    pub devices: usize,
    pub seed: u64,
    pub offered_bytes_per_s: f64,
    /// Offered load over capacity.
    pub load: f64,
    pub gaps: usize,
    pub mean_gap_s: f64,
    pub std_gap_s: f64,
    /// Capture-to-merge latency of the first and last capture in the window.
    pub first_lag_s: f64,
    pub last_lag_s: f64,
}

impl FreqPoint {
    /// Mean gap in units of the trigger period.
    pub fn gap_ratio(&self) -> f64 {
        self.mean_gap_s * self.frequency_hz
    }
}

/// Parameters of the closed-form socket vs per-request HTTP comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub capacity_bytes_per_s: f64,
    pub record_bytes: f64,
    /// Records offered per second over all devices.
    pub records_per_s: f64,
    pub session_s: f64,
    /// Total socket buffering across devices.
    pub socket_buffer_bytes: f64,
    /// Per-request connection and header overhead.
    pub http_overhead_bytes: f64,
    pub http_retries: u32,
    /// Share of a transfer spent before a timed-out attempt is abandoned.
    pub http_wasted_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportEstimate {
    pub load: f64,
    pub socket_delivered: f64,
    pub http_delivered: f64,
}

/// Fluid model of delivered data fraction. The persistent socket stream
/// loses only what overflows its buffers. Each HTTP attempt succeeds with
/// probability `s` and failed attempts are retried; under overload `s`
/// settles where useful transfers and the share wasted on abandoned
/// attempts together saturate the link.
pub fn transport_model(p: &TransportParams) -> TransportEstimate {
    let offered = p.records_per_s * p.record_bytes;
    let load = offered / p.capacity_bytes_per_s;
    let excess = ((offered - p.capacity_bytes_per_s) * p.session_s - p.socket_buffer_bytes).max(0.0);
    let socket_delivered = 1.0 - excess / (offered * p.session_s);

    // useful bytes plus bytes burnt by abandoned attempts fill the link:
    // delivered(s) * demand = C * (1 - w (1 - s)), delivered(s) = 1 - (1 - s)^(R+1)
    let demand = p.records_per_s * (p.record_bytes + p.http_overhead_bytes);
    let delivered = |s: f64| 1.0 - (1.0 - s).powi(p.http_retries as i32 + 1);
    let http_delivered = if demand <= p.capacity_bytes_per_s {
        1.0
    } else {
        let h = |s: f64| delivered(s) * demand - p.capacity_bytes_per_s * (1.0 - p.http_wasted_fraction * (1.0 - s));
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        delivered(0.5 * (lo + hi))
    };
    TransportEstimate {
        load,
        socket_delivered,
        http_delivered,
    }
}

fn framed_record_bytes(image_bytes: usize) -> Result<usize, HarnessError> {
    let k = Intrinsics::centered(600.0, 640, 480)?;
    let r = CaptureRecord::new(0, 0, 0, Pose::identity(), k, PayloadKind::Image, vec![0; image_bytes]);
    Ok(encode_frame(&r)?.len())
}

fn point_scenario(
    base: &ScenarioConfig,
    config: &ExperimentConfig,
    phi: f64,
    devices: usize,
    seed: u64,
) -> ScenarioConfig {
    let f = &config.freq_sweep;
    let mut c = base.clone();
    c.seed = seed;
    c.devices = devices;
    c.frequency_hz = phi;
    c.duration_s = f.duration_s;
    c.noise.miss_devices.retain(|d| *d < devices);
    c.payload.kind = PayloadKind::Image;
    c.payload.image_bytes = f.image_bytes;
    let triggers = (phi * f.duration_s).ceil() as usize + 2;
    let dp = &mut c.dataplane;
    dp.bandwidth_bytes_per_s = f.bandwidth_bytes_per_s;
    // buffers large enough that nothing is dropped: queueing shows up as delay
    dp.socket_bytes = 1 << 30;
    dp.buffer_depth = triggers;
    dp.max_unacked = triggers;
    dp.merge_timeout_ms = 1e3 * (f.duration_s + 60.0);
    c
}

/// Trigger-rate × device-count sweep under a shared uplink cap, with the
/// socket vs HTTP transport model alongside.
pub fn run_frequency_sweep(config: &ExperimentConfig, seed: u64) -> Result<(Report, Vec<FreqPoint>), HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let f = &config.freq_sweep;
    let seeds = seed_list(seed, f.seeds);
    let seed_slice = seeds.as_slice();
    let record_bytes = framed_record_bytes(f.image_bytes)?;
    let grid: Vec<(f64, usize, u64)> = f
        .frequencies_hz
        .iter()
        .flat_map(|p| {
            f.devices
                .iter()
                .flat_map(move |d| seed_slice.iter().map(move |s| (*p, *d, *s)))
        })
        .collect();

    let start = Instant::now();
    let points: Vec<FreqPoint> = grid
        .par_iter()
        .map(|&(phi, devices, s)| {
            let scenario = point_scenario(&base, config, phi, devices, s);
            let out = run_session_with(
                &scenario,
                &RunOptions {
                    store_root: None,
                    discard_payloads: true,
                },
            )?;
            let t0 = out.truth.first().map_or(0, |t| t.host_capture_ns);
            let end = t0 + (f.window_s * 1e9) as i64;
            let mut window: Vec<(i64, i64)> = out
                .merged
                .iter()
                .zip(&out.emitted_ns)
                .filter(|(_, e)| **e <= end)
                .filter_map(|(m, e)| {
                    out.truth
                        .get(m.trigger_id as usize)
                        .map(|t| (*e, *e - t.host_capture_ns))
                })
                .collect();
            window.sort_unstable();
            let gaps: Vec<f64> = window.windows(2).map(|w| (w[1].0 - w[0].0) as f64 * 1e-9).collect();
            let n = gaps.len().max(1) as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
            let offered = devices as f64 * phi * record_bytes as f64;
            Ok(FreqPoint {
                frequency_hz: phi,
                devices,
                seed: s,
                offered_bytes_per_s: offered,
                load: offered / f.bandwidth_bytes_per_s,
                gaps: gaps.len(),
                mean_gap_s: mean,
                std_gap_s: std,
                first_lag_s: window.first().map_or(0.0, |w| w.1 as f64 * 1e-9),
                last_lag_s: window.last().map_or(0.0, |w| w.1 as f64 * 1e-9),
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut report = Report::new(ExperimentKind::FreqSweep, hash.clone(), seeds.clone());
    report
        .timings
        .push(("frequency sweep".into(), start.elapsed().as_secs_f64()));
    let mut table = Table::new(
        "gaps",
        &[
            "frequency_hz",
            "devices",
            "offered_bytes_per_s",
            "load",
            "reference_gap_s",
            "gaps",
            "mean_gap_s",
            "std_gap_s",
            "first_lag_s",
            "last_lag_s",
        ],
    );
    let mut model = Table::new(
        "transport_model",
        &[
            "kind",
            "frequency_hz",
            "devices",
            "load",
            "socket_delivered",
            "http_delivered",
        ],
    );
    for p in &points {
        table.push(
            p.seed,
            &hash,
            vec![
                num(p.frequency_hz),
                p.devices.to_string(),
                num(p.offered_bytes_per_s),
                num(p.load),
                num(1.0 / p.frequency_hz),
                p.gaps.to_string(),
                num(p.mean_gap_s),
                num(p.std_gap_s),
                num(p.first_lag_s),
                num(p.last_lag_s),
            ],
        );
        let est = transport_model(&TransportParams {
            capacity_bytes_per_s: f.bandwidth_bytes_per_s,
            record_bytes: record_bytes as f64,
            records_per_s: p.devices as f64 * p.frequency_hz,
            session_s: f.duration_s,
            socket_buffer_bytes: (p.devices * base.dataplane.socket_bytes) as f64,
            http_overhead_bytes: 800.0,
            http_retries: 3,
            http_wasted_fraction: 0.5,
        });
        model.push(
            p.seed,
            &hash,
            vec![
                "MODEL".into(),
                num(p.frequency_hz),
                p.devices.to_string(),
                num(est.load),
                num(est.socket_delivered),
                num(est.http_delivered),
            ],
        );

        let what = format!(
            "{} Hz x {} devices (load {:.2}, seed {})",
            p.frequency_hz, p.devices, p.load, p.seed
        );
        let ratio = p.gap_ratio();
        if p.load < 1.0 {
            report.check(
                format!("{what}: mean gap matches 1/phi within 10%"),
                (ratio - 1.0).abs() <= 0.1,
                format!("gap {:.4} s, ratio {ratio:.3}", p.mean_gap_s),
            );
        } else if p.load >= 1.5 {
            report.check(
                format!("{what}: mean gap exceeds 1.5/phi"),
                ratio > 1.5,
                format!("gap {:.4} s, ratio {ratio:.3}", p.mean_gap_s),
            );
        } else {
            report.check(
                format!("{what}: buffering delays merges"),
                ratio > 1.0 && p.last_lag_s > p.first_lag_s,
                format!("ratio {ratio:.3}, lag {:.3} -> {:.3} s", p.first_lag_s, p.last_lag_s),
            );
        }
        if p.load > 1.0 {
            report.check(
                format!("{what}: queue delay grows"),
                p.last_lag_s > p.first_lag_s,
                format!("lag {:.3} -> {:.3} s", p.first_lag_s, p.last_lag_s),
            );
        }
    }
    report.tables.push(table);
    report.tables.push(model);
    Ok((report, points))
}
