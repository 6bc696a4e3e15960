use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::num;
use super::{seed_label, seed_list, ExperimentConfig, ExperimentKind, HarnessError, Report, Table};
use crate::dataplane::{decode_joints, MergedCapture, PayloadKind};
use crate::geometry::{
    incremental_bundle_adjust, project, reconstruct_frame, reprojection_error, BaCameraParams, Camera,
    ReconstructionOptions, Skeleton2D, Skeleton3D, DEFAULT_JOINT_COUNT,
};
use crate::sim::{run_session_with, RunOptions, ScenarioConfig, SessionOutput, TriggerTruth};

/// Where per-camera 2D joints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationSource {
    /// Decoded from the merged records, as the data manager sees them.
    Wire,
    /// The simulator's detections before f32 encoding.
    Exact,
}

/// One reconstructed frame and its error measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub trigger_id: u32,
    pub cameras: usize,
    pub skeleton: Skeleton3D,
    /// `true` when the reconstruction itself returned an error.
    pub aborted: bool,
    /// Mean and RMS pixel error against the observations used.
    pub reprojection_mean_px: Option<f64>,
    pub reprojection_rms_px: Option<f64>,
    /// Mean pixel error against clean projections in every capturing
    /// camera, including ones whose detections were missed.
    pub heldout_mean_px: Option<f64>,
    pub joint_error_m: Option<f64>,
    pub global_final_rms: Option<f64>,
    pub global_iterations: usize,
    pub incremental_final_rms: Option<f64>,
    pub incremental_invocations: usize,
    pub global_s: f64,
    pub incremental_s: f64,
}

fn frame_inputs(
    m: &MergedCapture,
    truth: Option<&TriggerTruth>,
    source: ObservationSource,
) -> Result<(Vec<Skeleton2D>, Vec<BaCameraParams>), HarnessError> {
    let mut observations = Vec::new();
    let mut cameras = Vec::new();
    for (d, record) in &m.records {
        if record.payload_kind != PayloadKind::Joints2d {
            continue;
        }
        let joints = match source {
            ObservationSource::Wire => decode_joints(&record.payload, DEFAULT_JOINT_COUNT)?,
            ObservationSource::Exact => {
                let det = truth.and_then(|t| t.detections.get(usize::from(*d)).cloned().flatten());
                match det {
                    Some(s) => s.joints,
                    None => continue,
                }
            }
        };
        let idx = observations.len();
        observations.push(Skeleton2D::new(m.trigger_id, idx, joints));
        cameras.push(BaCameraParams::fixed(Camera::new(record.intrinsics, record.pose)));
    }
    Ok((observations, cameras))
}

fn heldout_error(skeleton: &Skeleton3D, truth: &TriggerTruth) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (cam, clean) in truth.cameras.iter().zip(&truth.clean) {
        let (Some(cam), Some(clean)) = (cam, clean) else {
            continue;
        };
        for (point, reference) in skeleton.joints.iter().zip(&clean.joints) {
            let (Some(p), Some(r)) = (point, reference) else {
                continue;
            };
            if let Ok(q) = project(p, cam) {
                sum += nalgebra::distance(&q, &r.position);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn joint_error(skeleton: &Skeleton3D, truth: &TriggerTruth) -> Option<f64> {
    let errors: Vec<f64> = skeleton
        .joints
        .iter()
        .zip(&truth.skeleton.joints)
        .filter_map(|(a, b)| Some(nalgebra::distance(a.as_ref()?, b.as_ref()?)))
        .collect();
    (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
}

fn reconstruct_one(
    m: &MergedCapture,
    truth: Option<&TriggerTruth>,
    options: &ReconstructionOptions,
    source: ObservationSource,
    compare_incremental: bool,
) -> Result<FrameResult, HarnessError> {
    let (observations, cameras) = frame_inputs(m, truth, source)?;
    let mut result = FrameResult {
        trigger_id: m.trigger_id,
        cameras: cameras.len(),
        skeleton: Skeleton3D::unresolved(m.trigger_id, DEFAULT_JOINT_COUNT),
        aborted: false,
        reprojection_mean_px: None,
        reprojection_rms_px: None,
        heldout_mean_px: None,
        joint_error_m: None,
        global_final_rms: None,
        global_iterations: 0,
        incremental_final_rms: None,
        incremental_invocations: 0,
        global_s: 0.0,
        incremental_s: 0.0,
    };
    let start = Instant::now();
    let frame = match reconstruct_frame(&observations, &cameras, options) {
        Ok(f) => f,
        Err(_) => {
            result.aborted = true;
            return Ok(result);
        }
    };
    result.global_s = start.elapsed().as_secs_f64();
    if let Some(b) = &frame.bundle {
        result.global_final_rms = Some(b.final_rms());
        result.global_iterations = b.iterations;
    }
    let cams: Vec<Camera> = cameras.iter().map(|c| c.camera).collect();
    if frame.is_resolved() {
        if let Ok(r) = reprojection_error(&frame.skeleton, &observations, &cams, options.bundle.min_confidence) {
            result.reprojection_mean_px = Some(r.mean);
            result.reprojection_rms_px = Some(r.rms);
        }
        if let Some(t) = truth {
            result.heldout_mean_px = heldout_error(&frame.skeleton, t);
            result.joint_error_m = joint_error(&frame.skeleton, t);
        }
    }
    if compare_incremental {
        let start = Instant::now();
        if let Ok(inc) = incremental_bundle_adjust(&observations, &cameras, &frame.pairs, options.mode, &options.bundle)
        {
            result.incremental_final_rms = Some(inc.outcome.final_rms());
            result.incremental_invocations = inc.invocations;
        }
        result.incremental_s = start.elapsed().as_secs_f64();
    }
    result.skeleton = frame.skeleton;
    Ok(result)
}

/// Reconstructs every merged capture of a session that carries joint payloads.
pub fn reconstruct_session(
    session: &SessionOutput,
    options: &ReconstructionOptions,
    source: ObservationSource,
    compare_incremental: bool,
) -> Result<Vec<FrameResult>, HarnessError> {
    let mut merged: Vec<&MergedCapture> = session.merged.iter().collect();
    merged.sort_by_key(|m| m.trigger_id);
    merged
        .par_iter()
        .map(|m| {
            let truth = session
                .truth
                .get(m.trigger_id as usize)
                .filter(|t| t.trigger_id == m.trigger_id);
            reconstruct_one(m, truth, options, source, compare_incremental)
        })
        .collect()
}

fn joints_scenario(base: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.payload.kind = PayloadKind::Joints2d;
    c
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Session → per-frame skeletons, re-projection report and the
/// global-vs-incremental bundle adjustment comparison.
pub fn run_reconstruction(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<(Report, Vec<(u64, Vec<FrameResult>)>), HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let settings = &config.reconstruct;
    let seeds = seed_list(seed, settings.seeds);
    let options = ReconstructionOptions {
        min_pair_angle: settings.min_pair_angle,
        max_pair_angle: settings.max_pair_angle,
        ..ReconstructionOptions::default()
    };
    let source = if settings.exact_detections {
        ObservationSource::Exact
    } else {
        ObservationSource::Wire
    };

    let mut runs = Vec::new();
    for &s in &seeds {
        let scenario = joints_scenario(&base, s);
        let session = run_session_with(&scenario, &RunOptions::default())?;
        let frames = reconstruct_session(&session, &options, source, settings.compare_incremental)?;
        runs.push((s, scenario, frames));
    }

    let mut report = Report::new(ExperimentKind::Reconstruct, hash.clone(), seeds.clone());
    let mut table = Table::new(
        "frames",
        &[
            "trigger_id",
            "cameras",
            "resolved_joints",
            "aborted",
            "reprojection_mean_px",
            "reprojection_rms_px",
            "heldout_mean_px",
            "joint_error_m",
            "global_final_rms",
            "global_iterations",
            "incremental_final_rms",
            "incremental_invocations",
        ],
    );
    let mut summary = Table::new(
        "summary",
        &[
            "frames",
            "aborted",
            "mean_reprojection_px",
            "mean_joint_error_m",
            "global_invocations",
            "incremental_invocations",
            "max_rms_relative_gap",
        ],
    );
    fs::create_dir_all(out)?;
    for (s, scenario, frames) in &runs {
        let mut skeletons = String::new();
        for f in frames {
            table.push(
                s,
                &hash,
                vec![
                    f.trigger_id.to_string(),
                    f.cameras.to_string(),
                    f.skeleton.resolved_count().to_string(),
                    f.aborted.to_string(),
                    opt(f.reprojection_mean_px),
                    opt(f.reprojection_rms_px),
                    opt(f.heldout_mean_px),
                    opt(f.joint_error_m),
                    opt(f.global_final_rms),
                    f.global_iterations.to_string(),
                    opt(f.incremental_final_rms),
                    f.incremental_invocations.to_string(),
                ],
            );
            skeletons.push_str(&serde_json::to_string(&f.skeleton)?);
            skeletons.push('\n');
        }
        let path = out.join(format!("skeletons-{s}.jsonl"));
        fs::write(&path, skeletons)?;
        report.artifacts.push(path);

        let aborted = frames.iter().filter(|f| f.aborted).count();
        let reproj = mean(frames.iter().filter_map(|f| f.reprojection_mean_px));
        let joint = mean(frames.iter().filter_map(|f| f.joint_error_m));
        let global_calls = frames.iter().filter(|f| f.global_final_rms.is_some()).count();
        let incremental_calls: usize = frames.iter().map(|f| f.incremental_invocations).sum();
        let gaps: Vec<f64> = frames
            .iter()
            .filter_map(|f| {
                let (g, i) = (f.global_final_rms?, f.incremental_final_rms?);
                Some((g - i).abs() / i.max(1e-12))
            })
            .collect();
        let max_gap = gaps.iter().copied().fold(0.0, f64::max);
        summary.push(
            s,
            &hash,
            vec![
                frames.len().to_string(),
                aborted.to_string(),
                opt(reproj),
                opt(joint),
                global_calls.to_string(),
                incremental_calls.to_string(),
                num(max_gap),
            ],
        );
        report
            .timings
            .push((format!("seed {s} global BA"), frames.iter().map(|f| f.global_s).sum()));
        report.timings.push((
            format!("seed {s} incremental BA"),
            frames.iter().map(|f| f.incremental_s).sum(),
        ));

        report.check(
            format!("seed {s}: no frame aborts"),
            aborted == 0,
            format!("{aborted} of {}", frames.len()),
        );
        let n = &scenario.noise;
        let noiseless = n.joint_sigma_px == 0.0
            && n.pose_rotation_deg == 0.0
            && n.pose_translation_m == 0.0
            && scenario.network.jitter_ms == 0.0
            && n.miss_rate == 0.0;
        if noiseless && settings.exact_detections {
            let r = reproj.unwrap_or(f64::INFINITY);
            let j = joint.unwrap_or(f64::INFINITY);
            report.check(
                format!("seed {s}: noiseless re-projection below 1e-6 px"),
                r < 1e-6,
                format!("{r:e} px"),
            );
            report.check(
                format!("seed {s}: noiseless joint error below 1e-6 m"),
                j < 1e-6,
                format!("{j:e} m"),
            );
        } else if !noiseless {
            let r = reproj.unwrap_or(f64::INFINITY);
            report.check(
                format!("seed {s}: mean re-projection error in low single-digit px"),
                r < 10.0,
                format!("{r:.3} px"),
            );
        }
        if settings.compare_incremental {
            report.check(
                format!("seed {s}: global and incremental BA agree within 1% on every frame"),
                gaps.len() == frames.len() - aborted && max_gap <= 0.01,
                format!("{} frames compared, worst gap {:.4}%", gaps.len(), 100.0 * max_gap),
            );
            report.check(
                format!("seed {s}: global BA uses fewer optimizer invocations"),
                global_calls < incremental_calls,
                format!("{global_calls} vs {incremental_calls}"),
            );
        }
    }
    report.tables.push(table);
    report.tables.push(summary);
    Ok((report, runs.into_iter().map(|(s, _, f)| (s, f)).collect()))
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// One (rate, affected cameras, seed) session of the miss-detection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissdetPoint {
    pub rate: f64,
    pub affected: usize,
    pub seed: u64,
    pub frames: usize,
    pub aborted: usize,
    /// Frames with no joint resolved.
    pub unresolved: usize,
    pub mean_error_px: f64,
    pub std_error_px: f64,
}

/// Error-vs-miss-rate curves, with misses confined to the last `k` cameras.
pub fn run_missdetection_sweep(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Report, Vec<MissdetPoint>), HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let settings = &config.missdet;
    let seeds = seed_list(seed, settings.seeds);
    let seed_slice = seeds.as_slice();
    let c = base.devices;
    let affected: Vec<usize> = if settings.affected.is_empty() {
        (1..=c.saturating_sub(2)).collect()
    } else {
        settings.affected.clone()
    };
    if affected.iter().any(|k| *k == 0 || *k > c) {
        return Err(HarnessError::Config(format!(
            "affected camera counts {affected:?} out of 1..={c}"
        )));
    }
    let grid: Vec<(usize, f64, u64)> = affected
        .iter()
        .flat_map(|k| {
            settings
                .rates
                .iter()
                .flat_map(move |r| seed_slice.iter().map(move |s| (*k, *r, *s)))
        })
        .collect();
    let options = ReconstructionOptions::default();

    let start = Instant::now();
    let points: Vec<MissdetPoint> = grid
        .par_iter()
        .map(|&(k, rate, s)| {
            let mut scenario = joints_scenario(&base, s);
            scenario.duration_s = settings.duration_s;
            scenario.noise.miss_rate = rate;
            scenario.noise.miss_devices = (c - k..c).collect();
            let session = run_session_with(&scenario, &RunOptions::default())?;
            let frames: Vec<FrameResult> = session
                .merged
                .iter()
                .map(|m| {
                    let truth = session.truth.get(m.trigger_id as usize);
                    reconstruct_one(m, truth, &options, ObservationSource::Wire, false)
                })
                .collect::<Result<_, _>>()?;
            let errors: Vec<f64> = frames.iter().filter_map(|f| f.heldout_mean_px).collect();
            let n = errors.len().max(1) as f64;
            let mean = errors.iter().sum::<f64>() / n;
            let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
            Ok(MissdetPoint {
                rate,
                affected: k,
                seed: s,
                frames: frames.len(),
                aborted: frames.iter().filter(|f| f.aborted).count(),
                unresolved: frames
                    .iter()
                    .filter(|f| !f.aborted && f.skeleton.resolved_count() == 0)
                    .count(),
                mean_error_px: mean,
                std_error_px: std,
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut report = Report::new(ExperimentKind::MissdetSweep, hash.clone(), seeds.clone());
    report
        .timings
        .push(("miss-detection sweep".into(), start.elapsed().as_secs_f64()));
    let mut runs = Table::new(
        "runs",
        &[
            "rate",
            "affected",
            "frames",
            "aborted",
            "unresolved",
            "mean_error_px",
            "std_error_px",
        ],
    );
    for p in &points {
        runs.push(
            p.seed,
            &hash,
            vec![
                num(p.rate),
                p.affected.to_string(),
                p.frames.to_string(),
                p.aborted.to_string(),
                p.unresolved.to_string(),
                num(p.mean_error_px),
                num(p.std_error_px),
            ],
        );
    }
    let label = seed_label(&seeds);
    let mut curves = Table::new("curves", &["rate", "affected", "mean_error_px", "std_error_px"]);
    for &k in &affected {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &rate in &settings.rates {
            let sel: Vec<&MissdetPoint> = points.iter().filter(|p| p.affected == k && p.rate == rate).collect();
            let m = sel.iter().map(|p| p.mean_error_px).sum::<f64>() / sel.len() as f64;
            let sd = (sel.iter().map(|p| (p.mean_error_px - m).powi(2)).sum::<f64>() / sel.len() as f64).sqrt();
            curves.push(&label, &hash, vec![num(rate), k.to_string(), num(m), num(sd)]);
            xs.push(rate);
            ys.push(m);
        }
        if xs.len() >= 2 {
            let rho = spearman(&xs, &ys).unwrap_or(0.0);
            report.check(
                format!("{k} affected cameras: error non-decreasing in miss rate"),
                rho >= 0.0,
                format!(
                    "spearman {rho:.3} over {:?}",
                    ys.iter().map(|y| format!("{y:.3}")).collect::<Vec<_>>()
                ),
            );
        }
    }
    let aborted: usize = points.iter().map(|p| p.aborted).sum();
    report.check("no frame aborts", aborted == 0, format!("{aborted} aborted"));
    let guarded: usize = points
        .iter()
        .filter(|p| p.affected + 2 <= c)
        .map(|p| p.unresolved)
        .sum();
    report.check(
        "no frame fails while a valid pair observes the actor",
        guarded == 0,
        format!("{guarded} unresolved frames with at least two unaffected cameras"),
    );
    report.tables.push(runs);
    report.tables.push(curves);
    Ok((report, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_matches_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        // ties share the average rank: ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4)
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }
}
