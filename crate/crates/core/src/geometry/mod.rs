//! Pinhole cameras, pair selection, two-view triangulation and
//! centroid-initialized bundle adjustment of articulated skeletons.

mod bundle;
mod camera;
mod reproject;
mod skeleton;
mod triangulate;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::{
    bundle_adjust, incremental_bundle_adjust, BaCameraParams, BaMode, BaOutcome, BundleOptions, IncrementalOutcome,
};
pub use camera::{
    pair_angle, project, valid_pairs, Camera, GlobalTransform, Intrinsics, Pose, DEPTH_EPSILON, ROTATION_TOLERANCE,
};
pub use reproject::{reprojection_error, ReprojectionReport};
pub use skeleton::{
    select_subject, select_subject_index, subject_score, BoundingBox, Detection, Joint2D, Skeleton2D, Skeleton3D,
    CENTER_DISTANCE_FLOOR, DEFAULT_JOINT_COUNT,
};
pub use triangulate::{
    build_joint_cloud, centroid_init, sentinel_or_point, triangulate_pair, CloudPoint, JointCloud, DLT_RANK_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point at depth {depth} is on or behind the camera")]
    DegenerateProjection { depth: f64 },
    #[error("need at least two cameras, got {0}")]
    InsufficientCameras(usize),
    #[error("pair angle thresholds out of order: {min} > {max}")]
    InvalidThresholds { min: f64, max: f64 },
    #[error("no detections in frame")]
    NoDetections,
    #[error("rays are too close to parallel to triangulate")]
    TriangulationDegenerate,
    #[error("no joint is observed by two or more cameras")]
    NoObservations,
    #[error("non-finite residual")]
    NonFiniteResidual,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("mismatched inputs: {0}")]
    MismatchedInputs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionOptions {
    /// Lower bound τ_α on the image-normal angle of a valid pair, degrees.
    pub min_pair_angle: f64,
    /// Upper bound τ'_α, degrees.
    pub max_pair_angle: f64,
    pub mode: BaMode,
    pub bundle: BundleOptions,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        Self {
            min_pair_angle: 20.0,
            max_pair_angle: 160.0,
            mode: BaMode::PointsOnly,
            bundle: BundleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReconstruction {
    pub skeleton: Skeleton3D,
    pub pairs: Vec<(usize, usize)>,
    /// `|Ω^m|` for each joint.
    pub cloud_sizes: Vec<usize>,
    pub init: Vec<Option<Point3<f64>>>,
    /// `None` when no joint could be triangulated (e.g. total miss-detection).
    pub bundle: Option<BaOutcome>,
}

impl FrameReconstruction {
    pub fn is_resolved(&self) -> bool {
        self.skeleton.resolved_count() > 0
    }
}

/// Valid pairs → pairwise triangulation → centroid init → one global bundle
/// adjustment. A frame where nothing can be triangulated yields an all
/// UNRESOLVED skeleton rather than an error.
pub fn reconstruct_frame(
    observations: &[Skeleton2D],
    cameras: &[BaCameraParams],
    options: &ReconstructionOptions,
) -> Result<FrameReconstruction, GeometryError> {
    let joint_count = observations.first().map(Skeleton2D::len).unwrap_or(0);
    let frame = observations.first().map(|o| o.frame).unwrap_or(0);
    let cams: Vec<Camera> = cameras.iter().map(|c| c.camera).collect();
    let poses: Vec<Pose> = cams.iter().map(|c| c.pose).collect();
    let pairs = valid_pairs(&poses, options.min_pair_angle, options.max_pair_angle)?;
    let cloud = build_joint_cloud(observations, &cams, &pairs, options.bundle.min_confidence)?;
    let init = centroid_init(&cloud);
    let cloud_sizes = cloud.joints.iter().map(Vec::len).collect();

    let bundle = match bundle_adjust(&init, observations, cameras, options.mode, &options.bundle) {
        Ok(outcome) => Some(outcome),
        Err(GeometryError::NoObservations) => None,
        Err(e) => return Err(e),
    };
    let skeleton = match &bundle {
        Some(b) => b.skeleton.clone(),
        None => Skeleton3D::unresolved(frame, joint_count),
    };
    Ok(FrameReconstruction {
        skeleton,
        pairs,
        cloud_sizes,
        init,
        bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Vec<Camera> {
        (0..n)
            .map(|i| {
                let a = (i as f64 * 360.0 / n as f64).to_radians();
                let eye = Point3::new(4.0 * a.cos(), 4.0 * a.sin(), 1.5);
                Camera::new(
                    Intrinsics::centered(600.0, 640, 480).unwrap(),
                    Pose::look_at(&eye, &Point3::new(0.0, 0.0, 1.0), &Vector3::z()).unwrap(),
                )
            })
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let r = nalgebra::Rotation3::new(axis.normalize() * angle).into_inner();
        Pose::new(r, Vector3::zeros()).unwrap()
    }

    #[test]
    fn project_then_triangulate_is_identity() {
        // random camera pairs in [15°, 165°] looking at a random point
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Intrinsics::centered(500.0, 640, 480).unwrap();
        let mut trials = 0;
        while trials < 1000 {
            let target = Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let make = |rng: &mut ChaCha8Rng| {
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let eye = target + dir.normalize() * rng.gen_range(1.0..6.0);
                Pose::look_at(&eye, &target, &Vector3::z())
            };
            let (Ok(pa), Ok(pb)) = (make(&mut rng), make(&mut rng)) else {
                continue;
            };
            let alpha = pair_angle(&pa, &pb);
            if !(15.0..=165.0).contains(&alpha) {
                continue;
            }
            let (a, b) = (Camera::new(k, pa), Camera::new(k, pb));
            let x = target
                + Vector3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                );
            let (Ok(ha), Ok(hb)) = (project(&x, &a), project(&x, &b)) else {
                continue;
            };
            let est = triangulate_pair(&ha, &hb, &a, &b).unwrap();
            assert!((est - x).norm() < 1e-8, "error {} at angle {alpha}", (est - x).norm());
            trials += 1;
        }
    }

    #[test]
    fn pair_angle_symmetry_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let (ab, ba) = (pair_angle(&a, &b), pair_angle(&b, &a));
            assert_eq!(ab, ba);
            assert!((0.0..=180.0).contains(&ab));
        }
    }

    fn observe_all(truth: &[Point3<f64>], cams: &[Camera], frame: u32) -> Vec<Skeleton2D> {
        cams.iter()
            .enumerate()
            .map(|(c, cam)| {
                let joints = truth
                    .iter()
                    .map(|p| project(p, cam).ok().map(|h| Joint2D::new(h.x, h.y, 1.0)))
                    .collect();
                Skeleton2D::new(frame, c, joints)
            })
            .collect()
    }

    #[test]
    fn total_miss_is_unresolved_not_an_error() {
        let cams: Vec<_> = ring(6).into_iter().map(BaCameraParams::fixed).collect();
        let obs: Vec<_> = (0..6).map(|c| Skeleton2D::missing(9, c, 25)).collect();
        let rec = reconstruct_frame(&obs, &cams, &ReconstructionOptions::default()).unwrap();
        assert!(!rec.is_resolved());
        assert!(rec.bundle.is_none());
        assert_eq!(rec.skeleton.joints.len(), 25);
    }

    #[test]
    fn empty_cloud_entries_are_exactly_the_unresolved_joints() {
        let cams = ring(6);
        let truth: Vec<Point3<f64>> = (0..5).map(|i| Point3::new(0.05 * i as f64, 0.0, 1.0)).collect();
        let mut obs = observe_all(&truth, &cams, 0);
        // joint 3 is only seen by one camera
        for o in obs.iter_mut().skip(1) {
            o.joints[3] = None;
        }
        let params: Vec<_> = cams.into_iter().map(BaCameraParams::fixed).collect();
        let rec = reconstruct_frame(&obs, &params, &ReconstructionOptions::default()).unwrap();
        for (size, joint) in rec.cloud_sizes.iter().zip(&rec.skeleton.joints) {
            assert_eq!(*size == 0, joint.is_none());
        }
        assert!(rec.skeleton.joints[3].is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_surviving_valid_pair_resolves_joints(missed in prop::collection::vec(any::<bool>(), 6)) {
            let cams = ring(6);
            let truth: Vec<Point3<f64>> = (0..6).map(|i| Point3::new(0.1 * i as f64 - 0.3, 0.05, 0.8 + 0.1 * i as f64)).collect();
            let mut obs = observe_all(&truth, &cams, 2);
            for (c, &miss) in missed.iter().enumerate() {
                if miss {
                    obs[c] = Skeleton2D::missing(2, c, truth.len());
                }
            }
            let poses: Vec<Pose> = cams.iter().map(|c| c.pose).collect();
            let pairs = valid_pairs(&poses, 20.0, 160.0).unwrap();
            let surviving = pairs.iter().any(|&(a, b)| !missed[a] && !missed[b]);
            let params: Vec<_> = cams.into_iter().map(BaCameraParams::fixed).collect();
            let rec = reconstruct_frame(&obs, &params, &ReconstructionOptions::default()).unwrap();
            prop_assert_eq!(rec.skeleton.resolved_count() == truth.len(), surviving);
            if surviving {
                for (est, gt) in rec.skeleton.joints.iter().zip(&truth) {
                    prop_assert!((est.unwrap() - gt).norm() < 1e-6);
                }
            }
        }
    }
}
