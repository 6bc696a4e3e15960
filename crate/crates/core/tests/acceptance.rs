//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always print; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syncap::dataplane::{
    deserialize_record, encode_frame, load_index, serialize_record, CaptureRecord, FrameDecoder, PayloadKind,
};
use syncap::geometry::{Intrinsics, Pose};
use syncap::harness::{
    run_experiment, run_frequency_sweep, run_missdetection_sweep, run_reconstruction, run_sync_comparison, spearman,
    ExperimentConfig, ExperimentKind,
};
use syncap::hull::{build_grid, carve, marching_cubes, SphereScene, VoxelGrid, DEFAULT_EXTENT};
use syncap::sim::{run_session_with, Preset, RunOptions, ScenarioConfig};
use syncap::sync::SchemeKind;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn config(toml: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(toml, Path::new(".")).expect("valid experiment config")
}

/// Zero jitter, symmetric hops, random per-client latencies: every device
/// captures at the same global nanosecond.
fn compensation_exactness() -> Verdict {
    let start = Instant::now();
    let mut worst = 0i64;
    let mut triggers = 0usize;
    for seed in 1..=100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = ScenarioConfig::preset(Preset::Ideal);
        c.seed = seed;
        c.duration_s = 0.9;
        c.scheme = SchemeKind::TriggerRelay;
        c.network.hop_latency_ms = rng.gen_range(0.5..15.0);
        c.network.client_extra_ms = (0..c.devices - 1).map(|_| rng.gen_range(0.0..60.0)).collect();
        c.payload.kind = PayloadKind::Image;
        c.payload.image_bytes = 16;
        let out = match run_session_with(
            &c,
            &RunOptions {
                store_root: None,
                discard_payloads: true,
            },
        ) {
            Ok(o) => o,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        for t in &out.truth {
            let times: Vec<i64> = t.capture_ns.iter().flatten().copied().collect();
            if times.len() != c.devices {
                return verdict(
                    false,
                    format!("seed {seed} trigger {}: {} captures", t.trigger_id, times.len()),
                );
            }
            let spread = times.iter().max().unwrap() - times.iter().min().unwrap();
            worst = worst.max(spread);
            triggers += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1 && secs < 10.0,
        format!("max spread {worst} ns over {triggers} triggers, 100 seeds, {secs:.1} s (limit 1 ns, 10 s)"),
    )
}

fn scheme_parity() -> Verdict {
    let c = config("[sync_compare]\nseeds = 50\njitter_ms = [4.0, 8.0, 16.0]\nasymmetry_ms = 10.0\n");
    let (report, cells) = run_sync_comparison(&c, 1).expect("sync comparison runs");
    let mean = |scheme: SchemeKind, jitter: f64| {
        let v: Vec<f64> = cells
            .iter()
            .filter(|x| x.scheme == scheme && x.jitter_ms == jitter)
            .map(|x| x.spread.mean_ms)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for sigma in [4.0, 8.0, 16.0] {
        let (r, n, u) = (
            mean(SchemeKind::TriggerRelay, sigma),
            mean(SchemeKind::NtpAveraged, sigma),
            mean(SchemeKind::Uncompensated, sigma),
        );
        ok &= (r - n).abs() <= sigma && r <= 0.75 * u && n <= 0.75 * u;
        parts.push(format!("σ={sigma}: relay {r:.2}, ntp {n:.2}, none {u:.2} ms"));
    }
    verdict(ok && report.passed(), parts.join("; "))
}

fn geometry_oracle() -> Verdict {
    let start = Instant::now();
    let c = config("[scenario]\npreset = \"ideal\"\nduration_s = 9.9\n[reconstruct]\nexact_detections = true\ncompare_incremental = false\n");
    let dir = tempfile::tempdir().unwrap();
    let (_, sessions) = run_reconstruction(&c, 1, dir.path()).expect("reconstruction runs");
    let frames = &sessions[0].1;
    let reproj: Vec<f64> = frames.iter().filter_map(|f| f.reprojection_mean_px).collect();
    let joints: Vec<f64> = frames.iter().filter_map(|f| f.joint_error_m).collect();
    let mean_px = reproj.iter().sum::<f64>() / reproj.len().max(1) as f64;
    let max_m = joints.iter().copied().fold(0.0, f64::max);
    let cameras = frames.iter().map(|f| f.cameras).min().unwrap_or(0);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        frames.len() == 100 && reproj.len() == 100 && joints.len() == 100 && cameras == 6
            && mean_px < 1e-6 && max_m < 1e-6 && secs < 60.0,
        format!(
            "{} triggers x {cameras} cameras: mean re-projection {mean_px:.2e} px, max joint error {max_m:.2e} m, {secs:.1} s (limits 1e-6, 60 s)",
            frames.len()
        ),
    )
}

fn ba_equivalence() -> Verdict {
    let c = config(
        "[scenario]\npreset = \"ideal\"\nduration_s = 9.9\nnoise = { joint_sigma_px = 2.0 }\n[reconstruct]\ncompare_incremental = true\n",
    );
    let dir = tempfile::tempdir().unwrap();
    let (_, sessions) = run_reconstruction(&c, 1, dir.path()).expect("reconstruction runs");
    let frames = &sessions[0].1;
    let mut worst = 0.0f64;
    let mut compared = 0;
    for f in frames {
        match (f.global_final_rms, f.incremental_final_rms) {
            (Some(g), Some(i)) => {
                worst = worst.max((g - i).abs() / i.max(f64::MIN_POSITIVE));
                compared += 1;
            }
            _ => return verdict(false, format!("trigger {} has no bundle result", f.trigger_id)),
        }
    }
    let global = frames.len();
    let incremental: usize = frames.iter().map(|f| f.incremental_invocations).sum();
    verdict(
        compared == 100 && worst <= 0.01 && global < incremental,
        format!(
            "{compared} frames, worst RMS gap {:.4}% (limit 1%), invocations {global} vs {incremental}",
            worst * 100.0
        ),
    )
}

fn missdetection_robustness() -> Verdict {
    let c = config("[missdet]\nrates = [0.0, 0.2, 0.4, 0.6]\n");
    let (_, points) = run_missdetection_sweep(&c, 1).expect("sweep runs");
    let aborted: usize = points.iter().map(|p| p.aborted).sum();
    let mut curves: BTreeMap<usize, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for p in &points {
        curves
            .entry(p.affected)
            .or_default()
            .entry((p.rate * 1e6).round() as u64)
            .or_default()
            .push(p.mean_error_px);
    }
    let mut ok = aborted == 0 && !curves.is_empty();
    let mut parts = Vec::new();
    for (k, by_rate) in &curves {
        let rates: Vec<f64> = by_rate.keys().map(|r| *r as f64 / 1e6).collect();
        let errs: Vec<f64> = by_rate
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let rho = spearman(&rates, &errs);
        ok &= rho.is_some_and(|r| r >= 0.0);
        parts.push(format!("k={k} ρ={}", rho.map_or("n/a".into(), |r| format!("{r:.2}"))));
    }
    let max_k = curves.keys().max().copied().unwrap_or(0);
    verdict(
        ok,
        format!(
            "{aborted} aborted frames, affected cameras up to {max_k}; {}",
            parts.join(", ")
        ),
    )
}

fn random_record(rng: &mut ChaCha8Rng) -> CaptureRecord {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let rotation = Rotation3::from_scaled_axis(axis * rng.gen_range(0.0..3.0)).into_inner();
    let translation = Vector3::new(
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
    );
    let (w, h) = (rng.gen_range(64..2000u32), rng.gen_range(64..2000u32));
    let k = Intrinsics::new(
        rng.gen_range(100.0..2000.0),
        rng.gen_range(100.0..2000.0),
        f64::from(w) * rng.gen_range(0.3..0.7),
        f64::from(h) * rng.gen_range(0.3..0.7),
        f64::from(w),
        f64::from(h),
    )
    .unwrap();
    let kind = [PayloadKind::Joints2d, PayloadKind::Silhouette, PayloadKind::Image][rng.gen_range(0..3)];
    let payload: Vec<u8> = (0..rng.gen_range(0..1500)).map(|_| rng.gen()).collect();
    CaptureRecord::new(
        rng.gen(),
        rng.gen(),
        rng.gen_range(-(1i64 << 60)..(1i64 << 60)),
        Pose::new(rotation, translation).unwrap(),
        k,
        kind,
        payload,
    )
}

fn dataplane_integrity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let records: Vec<CaptureRecord> = (0..10_000).map(|_| random_record(&mut rng)).collect();
    let identical = records
        .iter()
        .filter(|r| serialize_record(r).and_then(|b| deserialize_record(&b)).ok().as_ref() == Some(*r))
        .count();

    let mut stream = Vec::new();
    let sent = 2_000;
    for r in &records[..sent] {
        let junk: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen()).collect();
        stream.extend_from_slice(&junk);
        stream.extend_from_slice(&encode_frame(r).unwrap());
    }
    let mut decoder = FrameDecoder::new();
    let mut decoded = Vec::new();
    for chunk in stream.chunks(997) {
        decoder.push(chunk);
        decoded.extend(decoder.drain());
    }
    decoded.extend(decoder.finish());
    let intact = decoded.iter().filter(|d| records[..sent].contains(d)).count();
    let ratio = intact as f64 / sent as f64;

    let dir = tempfile::tempdir().unwrap();
    let mut c = ScenarioConfig::preset(Preset::Easy);
    c.duration_s = 9.9;
    let out = run_session_with(
        &c,
        &RunOptions {
            store_root: Some(dir.path().into()),
            discard_payloads: true,
        },
    )
    .unwrap();
    let ids: Vec<u32> = load_index(dir.path()).unwrap().iter().map(|e| e.trigger_id).collect();
    let expected: Vec<u32> = (0..out.metrics.triggers as u32).collect();
    verdict(
        identical == records.len() && ratio >= 0.99 && out.metrics.mean_completeness == 1.0 && ids == expected,
        format!(
            "{identical}/10000 round-trips identical; {intact}/{sent} frames decoded through garbage ({:.2}%); completeness {}, {} stored ids 0..{}",
            ratio * 100.0,
            out.metrics.mean_completeness,
            ids.len(),
            ids.len().saturating_sub(1)
        ),
    )
}

fn throughput_knee() -> Verdict {
    let c = config("[freq_sweep]\nwindow_s = 5.0\n");
    let (_, points) = run_frequency_sweep(&c, 1).expect("sweep runs");
    let mut ok = true;
    let (mut below, mut above, mut band) = (0, 0, 0);
    let mut parts = Vec::new();
    for p in &points {
        let ratio = p.gap_ratio();
        let pass = if p.load < 1.0 {
            below += 1;
            (ratio - 1.0).abs() <= 0.1
        } else if p.load >= 1.5 {
            above += 1;
            ratio > 1.5 && p.last_lag_s > p.first_lag_s
        } else {
            // a fluid queue drains at the cap, so the gap settles at load/φ
            band += 1;
            ratio > 1.0 && p.last_lag_s > p.first_lag_s
        };
        ok &= pass;
        parts.push(format!(
            "{}Hz x{} load {:.2} gap {:.2}/φ",
            p.frequency_hz, p.devices, p.load, ratio
        ));
    }
    verdict(
        ok && below > 0 && above > 0,
        format!(
            "{below} under cap within 10%, {above} at load >= 1.5 above 1.5/φ, {band} in (1, 1.5) buffering; {}",
            parts.join(", ")
        ),
    )
}

/// Points whose angle from the sphere axis is within asin(R / D) for every camera.
fn cone_oracle(scene: &SphereScene, dims: usize) -> VoxelGrid {
    let mut g = build_grid(&scene.center, DEFAULT_EXTENT, [dims; 3]).unwrap();
    for k in 0..dims {
        for j in 0..dims {
            for i in 0..dims {
                let p = g.center(i, j, k);
                let inside = scene.cameras.iter().all(|cam| {
                    let eye = cam.pose.center();
                    let (axis, ray) = (scene.center - eye, p - eye);
                    let cos = axis.dot(&ray) / (axis.norm() * ray.norm());
                    cos.clamp(-1.0, 1.0).acos() <= (scene.radius / axis.norm()).asin()
                });
                let idx = g.index(i, j, k);
                g.occupancy[idx] = inside;
            }
        }
    }
    g
}

fn visual_hull() -> Verdict {
    let start = Instant::now();
    let scene = SphereScene::standard();
    let silhouettes = scene.silhouettes();
    let grid = build_grid(&scene.center, DEFAULT_EXTENT, [160; 3]).unwrap();
    let hull = carve(&grid, &silhouettes, 6).unwrap();
    let mut violations = 0;
    for k in 0..160 {
        for j in 0..160 {
            for i in 0..160 {
                let p: Point3<f64> = hull.center(i, j, k);
                if (p - scene.center).norm() <= scene.radius && !hull.is_occupied(i, j, k) {
                    violations += 1;
                }
            }
        }
    }
    let ratio = hull.occupied_volume() / scene.volume();
    let coarse = carve(
        &build_grid(&scene.center, DEFAULT_EXTENT, [40; 3]).unwrap(),
        &silhouettes,
        6,
    )
    .unwrap();
    let oracle = cone_oracle(&scene, 40);
    let oracle_ratio = oracle.occupied_volume() / scene.volume();
    let cross = (coarse.occupied_volume() - oracle.occupied_volume()).abs() / oracle.occupied_volume();
    let mesh = marching_cubes(&hull);
    let mesh_gap = (mesh.volume() - hull.occupied_volume()).abs() / hull.occupied_volume();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        violations == 0
            && (1.0..=1.35).contains(&ratio)
            && (1.0..=1.35).contains(&oracle_ratio)
            && cross <= 0.1
            && mesh_gap <= 0.1
            && secs < 120.0,
        format!(
            "{violations} interior centers carved; volume {ratio:.3}x sphere at 160^3, cone oracle {oracle_ratio:.3}x at 40^3 (carve differs {:.1}%); mesh vs voxels {:.2}%; {secs:.1} s",
            cross * 100.0,
            mesh_gap * 100.0
        ),
    )
}

fn metric_csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .filter(|p| !p.to_string_lossy().ends_with(".timing.csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Verdict {
    let c = config(
        r#"
[scenario]
duration_s = 2.9
[run]
seeds = 2
[sync_compare]
seeds = 3
[freq_sweep]
frequencies_hz = [5.0, 20.0]
duration_s = 4.0
window_s = 3.0
[reconstruct]
seeds = 2
[missdet]
seeds = 2
rates = [0.0, 0.4]
duration_s = 1.9
[volumetric]
dims = 48
max_frames = 2
duration_s = 1.9
"#,
    );
    let mut files = 0;
    for kind in ExperimentKind::ALL {
        let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let report = run_experiment(kind, &c, 7, dir.path()).unwrap();
                report.write(dir.path()).unwrap();
                metric_csvs(dir.path())
            })
            .collect();
        if runs[0].is_empty() || runs[0] != runs[1] {
            let differing: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
            return verdict(false, format!("{kind}: CSVs differ {differing:?}"));
        }
        files += runs[0].len();
    }
    verdict(
        true,
        format!("{files} metric CSVs byte-identical across repeated runs of all six experiments"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("compensation exactness", compensation_exactness),
        ("scheme parity", scheme_parity),
        ("geometry oracle", geometry_oracle),
        ("bundle adjustment equivalence", ba_equivalence),
        ("miss-detection robustness", missdetection_robustness),
        ("data-plane integrity", dataplane_integrity),
        ("throughput knee", throughput_knee),
        ("visual-hull correctness", visual_hull),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    println!();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n} [{}] {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.passed);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
