//! Bundle adjustment of skeleton joints (and optionally cameras) by
//! Levenberg-Marquardt on the summed squared re-projection distance.

use nalgebra::{DMatrix, DVector, Matrix2x3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Pose, DEPTH_EPSILON};
use super::skeleton::{Skeleton2D, Skeleton3D};
use super::triangulate::{check_observations, triangulate_pair};
use super::GeometryError;

/// Which parameter blocks the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaMode {
    PointsOnly,
    PointsAndCameras,
}

/// Camera parameter block `a_c`: intrinsics plus globalized pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaCameraParams {
    pub camera: Camera,
    pub fixed: bool,
}

impl BaCameraParams {
    pub fn fixed(camera: Camera) -> Self {
        Self { camera, fixed: true }
    }

    pub fn free(camera: Camera) -> Self {
        Self { camera, fixed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub initial_damping: f64,
    /// Damping multiplier on a rejected step; its inverse is applied on acceptance.
    pub damping_factor: f64,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Joints below this detector confidence are treated as missing.
    pub min_confidence: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_factor: 10.0,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-12,
            max_iterations: 100,
            min_confidence: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaOutcome {
    pub skeleton: Skeleton3D,
    pub cameras: Vec<BaCameraParams>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub observations: usize,
}

impl BaOutcome {
    /// Root-mean-square re-projection distance in pixels.
    pub fn final_rms(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            (self.final_cost / self.observations as f64).sqrt()
        }
    }

    pub fn initial_rms(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            (self.initial_cost / self.observations as f64).sqrt()
        }
    }
}

struct Observation {
    joint: usize,
    camera: usize,
    pixel: Point2<f64>,
}

const CAMERA_BLOCK: usize = 10;

struct Problem {
    /// Active joint index → slot in the point block.
    point_slot: Vec<Option<usize>>,
    /// Camera index → offset of its parameter block, when free.
    camera_offset: Vec<Option<usize>>,
    observations: Vec<Observation>,
    parameters: usize,
}

#[derive(Clone)]
struct State {
    points: Vec<Point3<f64>>,
    cameras: Vec<Camera>,
}

fn residual(cam: &Camera, point: &Point3<f64>, pixel: &Point2<f64>) -> Option<[f64; 2]> {
    let p = cam.pose.transform_point(point);
    if !(p.z > DEPTH_EPSILON) {
        return None;
    }
    let k = &cam.intrinsics;
    let u = k.fx * p.x / p.z + k.cx - pixel.x;
    let v = k.fy * p.y / p.z + k.cy - pixel.y;
    if u.is_finite() && v.is_finite() {
        Some([u, v])
    } else {
        None
    }
}

impl Problem {
    fn cost(&self, state: &State) -> f64 {
        let mut total = 0.0;
        for o in &self.observations {
            let slot = self.point_slot[o.joint].expect("observation of inactive joint");
            match residual(&state.cameras[o.camera], &state.points[slot], &o.pixel) {
                Some([u, v]) => total += u * u + v * v,
                None => return f64::INFINITY,
            }
        }
        total
    }

    fn linearize(&self, state: &State) -> (DMatrix<f64>, DVector<f64>) {
        let rows = 2 * self.observations.len();
        let mut jac = DMatrix::zeros(rows, self.parameters);
        let mut res = DVector::zeros(rows);
        for (i, o) in self.observations.iter().enumerate() {
            let slot = self.point_slot[o.joint].expect("observation of inactive joint");
            let cam = &state.cameras[o.camera];
            let x = state.points[slot];
            let rx = cam.pose.rotation * x.coords;
            let p = rx + cam.pose.translation;
            let k = &cam.intrinsics;
            let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));
            res[2 * i] = k.fx * p.x * iz + k.cx - o.pixel.x;
            res[2 * i + 1] = k.fy * p.y * iz + k.cy - o.pixel.y;

            let d_pix_d_p = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz2, 0.0, k.fy * iz, -k.fy * p.y * iz2);
            let d_point = d_pix_d_p * cam.pose.rotation;
            jac.fixed_view_mut::<2, 3>(2 * i, 3 * slot).copy_from(&d_point);

            if let Some(off) = self.camera_offset[o.camera] {
                jac[(2 * i, off)] = p.x * iz;
                jac[(2 * i, off + 2)] = 1.0;
                jac[(2 * i + 1, off + 1)] = p.y * iz;
                jac[(2 * i + 1, off + 3)] = 1.0;
                let d_rot = d_pix_d_p * (-rx.cross_matrix());
                jac.fixed_view_mut::<2, 3>(2 * i, off + 4).copy_from(&d_rot);
                jac.fixed_view_mut::<2, 3>(2 * i, off + 7).copy_from(&d_pix_d_p);
            }
        }
        (jac, res)
    }

    fn apply(&self, state: &State, delta: &DVector<f64>) -> State {
        let mut next = state.clone();
        for (slot, point) in next.points.iter_mut().enumerate() {
            point.coords += Vector3::new(delta[3 * slot], delta[3 * slot + 1], delta[3 * slot + 2]);
        }
        for (c, cam) in next.cameras.iter_mut().enumerate() {
            let Some(off) = self.camera_offset[c] else {
                continue;
            };
            cam.intrinsics.fx += delta[off];
            cam.intrinsics.fy += delta[off + 1];
            cam.intrinsics.cx += delta[off + 2];
            cam.intrinsics.cy += delta[off + 3];
            let omega = Vector3::new(delta[off + 4], delta[off + 5], delta[off + 6]);
            let rot = nalgebra::Rotation3::new(omega).into_inner();
            cam.pose = Pose {
                rotation: rot * cam.pose.rotation,
                translation: cam.pose.translation + Vector3::new(delta[off + 7], delta[off + 8], delta[off + 9]),
            };
        }
        next
    }
}

/// Minimizes `Σ_m Σ_c ‖Q(a_c, s_m) − h_m,c‖²` starting from `init`.
///
/// `observations[c]` belongs to `cameras[c]`. `None` entries of `init` are
/// excluded and come back UNRESOLVED; initialized joints seen by fewer than
/// two cameras keep their initial position. In [`BaMode::PointsOnly`] the
/// returned cameras are copies of the inputs.
pub fn bundle_adjust(
    init: &[Option<Point3<f64>>],
    observations: &[Skeleton2D],
    cameras: &[BaCameraParams],
    mode: BaMode,
    options: &BundleOptions,
) -> Result<BaOutcome, GeometryError> {
    let joint_count = check_observations(observations, cameras.len())?;
    if init.len() != joint_count {
        return Err(GeometryError::MismatchedInputs(format!(
            "{} initial points for {} joints",
            init.len(),
            joint_count
        )));
    }
    let frame = observations.first().map(|o| o.frame).unwrap_or(0);

    for p in init.iter().flatten() {
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteResidual);
        }
    }

    // gather observations of initialized joints seen by at least two cameras
    let mut point_slot = vec![None; joint_count];
    let mut points = Vec::new();
    let mut obs = Vec::new();
    for (m, seed) in init.iter().enumerate() {
        let Some(seed) = seed else { continue };
        let seen: Vec<(usize, Point2<f64>)> = observations
            .iter()
            .enumerate()
            .filter_map(|(c, o)| o.usable(m, options.min_confidence).map(|h| (c, h)))
            .filter(|(c, _)| cameras[*c].camera.depth(seed) > DEPTH_EPSILON)
            .collect();
        if seen.len() < 2 {
            continue;
        }
        point_slot[m] = Some(points.len());
        points.push(*seed);
        obs.extend(seen.into_iter().map(|(camera, pixel)| Observation {
            joint: m,
            camera,
            pixel,
        }));
    }
    if points.is_empty() {
        return Err(GeometryError::NoObservations);
    }

    let mut camera_offset = vec![None; cameras.len()];
    let mut parameters = 3 * points.len();
    if mode == BaMode::PointsAndCameras {
        for (c, params) in cameras.iter().enumerate() {
            if !params.fixed && obs.iter().any(|o| o.camera == c) {
                camera_offset[c] = Some(parameters);
                parameters += CAMERA_BLOCK;
            }
        }
    }

    let problem = Problem {
        point_slot,
        camera_offset,
        observations: obs,
        parameters,
    };
    let mut state = State {
        points,
        cameras: cameras.iter().map(|c| c.camera).collect(),
    };

    let initial_cost = problem.cost(&state);
    if !initial_cost.is_finite() {
        return Err(GeometryError::NonFiniteResidual);
    }
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut damping = options.initial_damping;
    let mut iterations = 0;

    'outer: while iterations < options.max_iterations && cost > 0.0 {
        iterations += 1;
        let (jac, res) = problem.linearize(&state);
        let gradient = jac.transpose() * &res;
        if gradient.amax() < options.gradient_tolerance {
            break;
        }
        let hessian = jac.transpose() * &jac;
        loop {
            let mut damped = hessian.clone();
            for i in 0..parameters {
                damped[(i, i)] += damping * hessian[(i, i)].max(1e-9);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-&gradient)));
            if let Some(step) = step {
                let candidate = problem.apply(&state, &step);
                let candidate_cost = problem.cost(&candidate);
                if candidate_cost.is_finite() && candidate_cost < cost {
                    let relative = (cost - candidate_cost) / cost;
                    state = candidate;
                    cost = candidate_cost;
                    history.push(cost);
                    damping /= options.damping_factor;
                    if relative < options.relative_cost_tolerance {
                        break 'outer;
                    }
                    break;
                }
            }
            damping *= options.damping_factor;
            if damping > 1e16 {
                break 'outer;
            }
        }
    }

    let mut joints = vec![None; joint_count];
    for (m, seed) in init.iter().enumerate() {
        joints[m] = match problem.point_slot[m] {
            Some(slot) => Some(state.points[slot]),
            None => *seed,
        };
    }
    let out_cameras = cameras
        .iter()
        .zip(&state.cameras)
        .enumerate()
        .map(|(c, (params, cam))| {
            if problem.camera_offset[c].is_some() {
                BaCameraParams {
                    camera: *cam,
                    fixed: params.fixed,
                }
            } else {
                *params
            }
        })
        .collect();

    Ok(BaOutcome {
        skeleton: Skeleton3D::new(frame, joints),
        cameras: out_cameras,
        initial_cost,
        final_cost: cost,
        cost_history: history,
        iterations,
        observations: problem.observations.len(),
    })
}

/// Result of the add-one-camera-at-a-time baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalOutcome {
    pub outcome: BaOutcome,
    /// Number of optimizer runs it took.
    pub invocations: usize,
    /// Order in which cameras joined the reconstruction.
    pub camera_order: Vec<usize>,
}

fn masked(observations: &[Skeleton2D], active: &[bool]) -> Vec<Skeleton2D> {
    observations
        .iter()
        .zip(active)
        .map(|(o, &on)| {
            if on {
                o.clone()
            } else {
                Skeleton2D::missing(o.frame, o.camera, o.len())
            }
        })
        .collect()
}

/// Incremental reconstruction: seed from the best valid pair, then add one
/// camera at a time and re-run bundle adjustment after each addition, using
/// the previous solution as the next initialization.
pub fn incremental_bundle_adjust(
    observations: &[Skeleton2D],
    cameras: &[BaCameraParams],
    pairs: &[(usize, usize)],
    mode: BaMode,
    options: &BundleOptions,
) -> Result<IncrementalOutcome, GeometryError> {
    let joint_count = check_observations(observations, cameras.len())?;
    let min_conf = options.min_confidence;
    let co_observed = |a: usize, b: usize| {
        (0..joint_count)
            .filter(|&m| observations[a].usable(m, min_conf).is_some() && observations[b].usable(m, min_conf).is_some())
            .count()
    };

    let mut best: Option<((usize, usize), usize)> = None;
    for &(a, b) in pairs {
        let n = co_observed(a, b);
        if n > 0 && best.map_or(true, |(_, bn)| n > bn) {
            best = Some(((a, b), n));
        }
    }
    let Some(((a, b), _)) = best else {
        return Err(GeometryError::NoObservations);
    };

    let mut current: Vec<BaCameraParams> = cameras.to_vec();
    let mut active = vec![false; cameras.len()];
    active[a] = true;
    active[b] = true;
    let mut order = vec![a, b];
    let mut init: Vec<Option<Point3<f64>>> = vec![None; joint_count];

    let mut invocations = 0;
    let mut last: BaOutcome;
    loop {
        // seed any joint still missing from a valid pair among active cameras
        let cams: Vec<Camera> = current.iter().map(|c| c.camera).collect();
        for (m, slot) in init.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            for &(p, q) in pairs {
                if !(active[p] && active[q]) {
                    continue;
                }
                let (Some(hp), Some(hq)) = (observations[p].usable(m, min_conf), observations[q].usable(m, min_conf))
                else {
                    continue;
                };
                if let Ok(x) = triangulate_pair(&hp, &hq, &cams[p], &cams[q]) {
                    *slot = Some(x);
                    break;
                }
            }
        }

        let view = masked(observations, &active);
        let outcome = bundle_adjust(&init, &view, &current, mode, options)?;
        invocations += 1;
        init = outcome.skeleton.joints.clone();
        current = outcome.cameras.clone();
        last = outcome;

        // next camera: the inactive one seeing the most already-seeded joints
        let next = (0..cameras.len())
            .filter(|&c| !active[c])
            .map(|c| {
                let seen = (0..joint_count)
                    .filter(|&m| observations[c].usable(m, min_conf).is_some())
                    .collect::<Vec<_>>();
                let overlap = seen.iter().filter(|&&m| init[m].is_some()).count();
                (c, overlap, seen.len())
            })
            .filter(|&(_, _, seen)| seen > 0)
            .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)));
        match next {
            Some((c, _, _)) => {
                active[c] = true;
                order.push(c);
            }
            None => break,
        }
    }

    Ok(IncrementalOutcome {
        outcome: last,
        invocations,
        camera_order: order,
    })
}

#[cfg(test)]
mod tests {
    use super::super::camera::{project, Intrinsics};
    use super::super::skeleton::Joint2D;
    use super::super::triangulate::{build_joint_cloud, centroid_init};
    use super::super::valid_pairs;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rig(n: usize) -> Vec<Camera> {
        (0..n)
            .map(|i| {
                let a = (i as f64 * 360.0 / n as f64).to_radians();
                let eye = Point3::new(4.0 * a.cos(), 4.0 * a.sin(), 1.5);
                let pose = Pose::look_at(&eye, &Point3::new(0.0, 0.0, 1.0), &Vector3::z()).unwrap();
                Camera::new(Intrinsics::centered(600.0, 640, 480).unwrap(), pose)
            })
            .collect()
    }

    fn skeleton(rng: &mut ChaCha8Rng, m: usize) -> Vec<Point3<f64>> {
        (0..m)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(0.1..1.8),
                )
            })
            .collect()
    }

    fn observe(points: &[Point3<f64>], cams: &[Camera], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Skeleton2D> {
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        cams.iter()
            .enumerate()
            .map(|(c, cam)| {
                let joints = points
                    .iter()
                    .map(|p| {
                        let h = project(p, cam).unwrap();
                        let (dx, dy) = if sigma > 0.0 {
                            (noise.sample(rng), noise.sample(rng))
                        } else {
                            (0.0, 0.0)
                        };
                        Some(Joint2D::new(h.x + dx, h.y + dy, 1.0))
                    })
                    .collect();
                Skeleton2D::new(0, c, joints)
            })
            .collect()
    }

    fn global_init(obs: &[Skeleton2D], cams: &[Camera]) -> Vec<Option<Point3<f64>>> {
        let poses: Vec<Pose> = cams.iter().map(|c| c.pose).collect();
        let pairs = valid_pairs(&poses, 20.0, 160.0).unwrap();
        centroid_init(&build_joint_cloud(obs, cams, &pairs, 0.1).unwrap())
    }

    #[test]
    fn noiseless_points_only_recovers_skeleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams = rig(6);
        let truth = skeleton(&mut rng, 25);
        let obs = observe(&truth, &cams, 0.0, &mut rng);
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        let out = bundle_adjust(
            &global_init(&obs, &cams),
            &obs,
            &params,
            BaMode::PointsOnly,
            &BundleOptions::default(),
        )
        .unwrap();
        for (est, gt) in out.skeleton.joints.iter().zip(&truth) {
            assert!((est.unwrap() - gt).norm() < 1e-6);
        }
        assert!(out.final_rms() < 1e-6);
    }

    #[test]
    fn noisy_cost_strictly_decreases_and_history_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cams = rig(6);
        let truth = skeleton(&mut rng, 25);
        let obs = observe(&truth, &cams, 2.0, &mut rng);
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        let out = bundle_adjust(
            &global_init(&obs, &cams),
            &obs,
            &params,
            BaMode::PointsOnly,
            &BundleOptions::default(),
        )
        .unwrap();
        assert!(out.final_cost < out.initial_cost);
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn points_only_leaves_cameras_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cams = rig(5);
        let truth = skeleton(&mut rng, 10);
        let obs = observe(&truth, &cams, 1.5, &mut rng);
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::free).collect();
        let out = bundle_adjust(
            &global_init(&obs, &cams),
            &obs,
            &params,
            BaMode::PointsOnly,
            &BundleOptions::default(),
        )
        .unwrap();
        let before = serde_json::to_vec(&params).unwrap();
        let after = serde_json::to_vec(&out.cameras).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn fixed_cameras_stay_put_when_others_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cams = rig(4);
        let truth = skeleton(&mut rng, 25);
        let obs = observe(&truth, &cams, 1.0, &mut rng);
        let mut params: Vec<_> = cams.iter().copied().map(BaCameraParams::free).collect();
        params[0].fixed = true;
        let out = bundle_adjust(
            &global_init(&obs, &cams),
            &obs,
            &params,
            BaMode::PointsAndCameras,
            &BundleOptions::default(),
        )
        .unwrap();
        assert_eq!(out.cameras[0], params[0]);
        assert_ne!(out.cameras[1].camera, params[1].camera);
        assert!(out.final_cost <= out.initial_cost);
        for c in &out.cameras {
            c.camera.pose.validate(1e-9).unwrap();
        }
    }

    #[test]
    fn excluded_joints_stay_unresolved() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cams = rig(3);
        let truth = skeleton(&mut rng, 4);
        let obs = observe(&truth, &cams, 0.0, &mut rng);
        let mut init = global_init(&obs, &cams);
        init[2] = None;
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        let out = bundle_adjust(&init, &obs, &params, BaMode::PointsOnly, &BundleOptions::default()).unwrap();
        assert!(out.skeleton.joints[2].is_none());
        assert_eq!(out.skeleton.resolved_count(), 3);
    }

    #[test]
    fn no_initialized_joint_is_an_error() {
        let cams = rig(3);
        let obs: Vec<_> = (0..3).map(|c| Skeleton2D::missing(0, c, 5)).collect();
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        assert!(matches!(
            bundle_adjust(&[None; 5], &obs, &params, BaMode::PointsOnly, &BundleOptions::default()),
            Err(GeometryError::NoObservations)
        ));
    }

    #[test]
    fn nan_initialization_is_rejected() {
        let cams = rig(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = skeleton(&mut rng, 2);
        let obs = observe(&truth, &cams, 0.0, &mut rng);
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        let init = vec![Some(Point3::new(f64::NAN, 0.0, 1.0)), Some(truth[1])];
        assert!(matches!(
            bundle_adjust(&init, &obs, &params, BaMode::PointsOnly, &BundleOptions::default()),
            Err(GeometryError::NonFiniteResidual)
        ));
    }

    #[test]
    fn two_view_single_joint_matches_dlt() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cams = rig(6)[..2].to_vec();
        for _ in 0..20 {
            let truth = skeleton(&mut rng, 1);
            let obs = observe(&truth, &cams, 0.0, &mut rng);
            let dlt = triangulate_pair(
                &obs[0].joints[0].unwrap().position,
                &obs[1].joints[0].unwrap().position,
                &cams[0],
                &cams[1],
            )
            .unwrap();
            let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
            let init = vec![Some(dlt + Vector3::new(0.01, -0.02, 0.015))];
            let out = bundle_adjust(&init, &obs, &params, BaMode::PointsOnly, &BundleOptions::default()).unwrap();
            assert!((out.skeleton.joints[0].unwrap() - dlt).norm() < 1e-6);
        }
    }

    #[test]
    fn incremental_and_global_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cams = rig(6);
        let truth = skeleton(&mut rng, 25);
        let obs = observe(&truth, &cams, 2.0, &mut rng);
        let params: Vec<_> = cams.iter().copied().map(BaCameraParams::fixed).collect();
        let poses: Vec<Pose> = cams.iter().map(|c| c.pose).collect();
        let pairs = valid_pairs(&poses, 20.0, 160.0).unwrap();
        let global = bundle_adjust(
            &global_init(&obs, &cams),
            &obs,
            &params,
            BaMode::PointsOnly,
            &BundleOptions::default(),
        )
        .unwrap();
        let inc =
            incremental_bundle_adjust(&obs, &params, &pairs, BaMode::PointsOnly, &BundleOptions::default()).unwrap();
        assert_eq!(inc.invocations, 5);
        assert_eq!(inc.camera_order.len(), 6);
        let (g, i) = (global.final_rms(), inc.outcome.final_rms());
        assert!((g - i).abs() <= 0.01 * i, "global {g} incremental {i}");
    }
}
