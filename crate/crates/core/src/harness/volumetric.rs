use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recon::{reconstruct_session, ObservationSource};
use super::report::num;
use super::{seed_list, ExperimentConfig, ExperimentKind, HarnessError, Report, Table};
use crate::dataplane::{decode_silhouette, PayloadKind};
use crate::geometry::{Camera, ReconstructionOptions};
use crate::hull::{build_grid, carve, carve_conservative, export_mesh, marching_cubes, MeshFormat, Silhouette};
use crate::sim::{run_session_with, ActorModel, Capsule, RunOptions, ScenarioConfig, HIP_JOINT};

/// Volumes of one carved frame at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeFrame {
    pub seed: u64,
    /// `reference` (noise-free poses) or `noisy`.
    pub run: String,
    pub trigger_id: u32,
    pub cameras: usize,
    pub n_required: usize,
    pub voxel_volume_m3: f64,
    pub mesh_volume_m3: f64,
    pub triangles: usize,
    /// Ground-truth capsule samples outside the mesh; checked at `n = C`
    /// on the reference run only.
    pub samples_outside: Option<usize>,
}

/// Points on the surface of a capsule: rings along the axis plus both caps.
fn capsule_samples(c: &Capsule, count: usize) -> Vec<Point3<f64>> {
    let axis = c.b - c.a;
    let dir = axis.try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            // Fibonacci points; the middle band maps to the cylinder, the rest to the caps
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let phi = golden * i as f64;
            if z.abs() < 0.5 {
                c.a + axis * (z + 0.5) + (u * phi.cos() + v * phi.sin()) * c.radius
            } else {
                let r = (1.0 - z * z).sqrt();
                let w = u * (phi.cos() * r) + v * (phi.sin() * r) + dir * z;
                (if z > 0.0 { c.b } else { c.a }) + w * c.radius
            }
        })
        .collect()
}

fn silhouette_scenario(
    base: &ScenarioConfig,
    config: &ExperimentConfig,
    seed: u64,
    rotation_deg: f64,
) -> ScenarioConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.duration_s = config.volumetric.duration_s;
    c.noise.pose_rotation_deg = rotation_deg;
    c.noise.pose_translation_m = 0.0;
    c.network.jitter_ms = 0.0;
    c.payload.kind = PayloadKind::Silhouette;
    c
}

/// Per-trigger carving and meshing. A joints session supplies the
/// reconstructed hip that centers each grid; two silhouette sessions of the
/// same world, with exact and with noisy device poses, are carved for every
/// `n_Ψ` in the sweep.
pub fn run_volumetric(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<(Report, Vec<VolumeFrame>), HarnessError> {
    let hash = config.hash()?;
    let base = config.scenario()?;
    let v = &config.volumetric;
    let seeds = seed_list(seed, v.seeds);
    let mut report = Report::new(ExperimentKind::Volumetric, hash.clone(), seeds.clone());
    let mut frames = Vec::new();
    let ext = match v.mesh_format {
        MeshFormat::Obj => "obj",
        MeshFormat::Ply => "ply",
    };

    for &s in &seeds {
        let mut joints = silhouette_scenario(&base, config, s, 0.0);
        joints.payload.kind = PayloadKind::Joints2d;
        let joints_session = run_session_with(&joints, &RunOptions::default())?;
        let hips: BTreeMap<u32, Point3<f64>> = reconstruct_session(
            &joints_session,
            &ReconstructionOptions::default(),
            ObservationSource::Wire,
            false,
        )?
        .into_iter()
        .filter_map(|f| Some((f.trigger_id, f.skeleton.joints.get(HIP_JOINT).copied().flatten()?)))
        .collect();
        let actor = ActorModel::body25(base.actor.clone());

        for (run, rotation) in [("reference", 0.0), ("noisy", v.noisy_pose_deg)] {
            let scenario = silhouette_scenario(&base, config, s, rotation);
            let session = run_session_with(&scenario, &RunOptions::default())?;
            let mut merged: Vec<_> = session.merged.iter().collect();
            merged.sort_by_key(|m| m.trigger_id);
            let chosen: Vec<_> = merged
                .into_iter()
                .filter(|m| m.trigger_id as usize % v.frame_stride == 0 && hips.contains_key(&m.trigger_id))
                .take(v.max_frames)
                .collect();
            let mesh_dir = out.join("meshes").join(format!("seed-{s}")).join(run);
            fs::create_dir_all(&mesh_dir)?;

            for m in chosen {
                let start = Instant::now();
                let silhouettes: Vec<Silhouette> = m
                    .records
                    .values()
                    .filter(|r| r.payload_kind == PayloadKind::Silhouette)
                    .map(|r| {
                        Ok(Silhouette {
                            camera: Camera::new(r.intrinsics, r.pose),
                            mask: decode_silhouette(&r.payload)?,
                        })
                    })
                    .collect::<Result<_, HarnessError>>()?;
                let c = silhouettes.len();
                let grid = build_grid(&hips[&m.trigger_id], v.extent_m, [v.dims; 3])?;
                let support = if v.conservative {
                    carve_conservative(&grid, &silhouettes, 0, 3f64.sqrt() * grid.voxel.max())?
                } else {
                    carve(&grid, &silhouettes, 0)?
                };
                let t = session
                    .truth
                    .get(m.trigger_id as usize)
                    .map(|t| t.host_capture_ns as f64 * 1e-9);
                let samples: Vec<Point3<f64>> = match t {
                    Some(t) if run == "reference" => actor
                        .capsules_at(t)
                        .iter()
                        .flat_map(|cap| capsule_samples(cap, v.samples_per_capsule))
                        .collect(),
                    _ => Vec::new(),
                };
                let thresholds: Vec<usize> = v.threshold_offsets.iter().filter(|o| **o < c).map(|o| c - o).collect();
                for n in thresholds {
                    let occupied = support.with_threshold(n);
                    let mesh = marching_cubes(&occupied);
                    let path = mesh_dir.join(format!("trigger-{:05}-n{n}.{ext}", m.trigger_id));
                    export_mesh(&mesh, &path, v.mesh_format)?;
                    report.artifacts.push(path);
                    let samples_outside = (n == c && !samples.is_empty())
                        .then(|| samples.par_iter().filter(|p| !mesh.contains(p)).count());
                    frames.push(VolumeFrame {
                        seed: s,
                        run: run.into(),
                        trigger_id: m.trigger_id,
                        cameras: c,
                        n_required: n,
                        voxel_volume_m3: occupied.occupied_volume(),
                        mesh_volume_m3: mesh.volume(),
                        triangles: mesh.triangles.len(),
                        samples_outside,
                    });
                }
                report.timings.push((
                    format!("seed {s} {run} trigger {} carve+mesh", m.trigger_id),
                    start.elapsed().as_secs_f64(),
                ));
            }
        }
    }

    let mut table = Table::new(
        "volumes",
        &[
            "run",
            "trigger_id",
            "cameras",
            "n_required",
            "voxel_volume_m3",
            "mesh_volume_m3",
            "triangles",
            "samples_outside",
        ],
    );
    for f in &frames {
        table.push(
            f.seed,
            &hash,
            vec![
                f.run.clone(),
                f.trigger_id.to_string(),
                f.cameras.to_string(),
                f.n_required.to_string(),
                num(f.voxel_volume_m3),
                num(f.mesh_volume_m3),
                f.triangles.to_string(),
                f.samples_outside.map(|n| n.to_string()).unwrap_or_default(),
            ],
        );
    }

    // volume non-increasing in n for each carved frame
    let mut by_frame: BTreeMap<(u64, &str, u32), Vec<(usize, f64)>> = BTreeMap::new();
    for f in &frames {
        by_frame
            .entry((f.seed, &f.run, f.trigger_id))
            .or_default()
            .push((f.n_required, f.voxel_volume_m3));
    }
    let violations = by_frame
        .values()
        .filter(|vols| {
            let mut v = (*vols).clone();
            v.sort_by_key(|(n, _)| *n);
            v.windows(2).any(|w| w[1].1 > w[0].1)
        })
        .count();
    report.check(
        "volume non-increasing in n_psi",
        violations == 0,
        format!("{violations} of {} frames violate", by_frame.len()),
    );
    let outside: usize = frames.iter().filter_map(|f| f.samples_outside).sum();
    let checked: usize = frames.iter().filter(|f| f.samples_outside.is_some()).count();
    report.check(
        "noise-free hull at n_psi = C contains the actor",
        outside == 0 && checked > 0,
        format!("{outside} capsule samples outside over {checked} frames"),
    );

    // inflation at the default threshold C-1
    let total = |run: &str| -> f64 {
        frames
            .iter()
            .filter(|f| f.run == run && f.n_required + 1 == f.cameras)
            .map(|f| f.voxel_volume_m3)
            .sum()
    };
    let (reference, noisy) = (total("reference"), total("noisy"));
    if reference > 0.0 {
        let ratio = noisy / reference;
        report.check(
            format!("{} deg pose noise inflates the hull by at most 50%", v.noisy_pose_deg),
            ratio <= 1.5,
            format!("noisy/reference volume {ratio:.3} at n_psi = C-1"),
        );
    }
    report.tables.push(table);
    Ok((report, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsule_samples_lie_on_the_surface() {
        let c = Capsule {
            a: Point3::new(0.0, 0.0, 0.0),
            b: Point3::new(0.0, 0.3, 0.4),
            radius: 0.05,
        };
        let pts = capsule_samples(&c, 64);
        assert_eq!(pts.len(), 64);
        for p in pts {
            assert!((c.distance(&p) - c.radius).abs() < 1e-12, "{}", c.distance(&p));
        }
    }
}
