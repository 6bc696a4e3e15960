use serde::{Deserialize, Serialize};

use super::camera::{project, Camera};
use super::skeleton::{Skeleton2D, Skeleton3D};
use super::triangulate::check_observations;
use super::GeometryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    /// Mean pixel distance per joint over the cameras observing it.
    pub per_joint: Vec<Option<f64>>,
    /// Mean pixel distance per camera over the joints it observes.
    pub per_camera: Vec<Option<f64>>,
    /// Mean over every qualifying (joint, camera) pair.
    pub mean: f64,
    pub rms: f64,
    pub count: usize,
}

/// Pixel distance between each resolved joint's projection and its 2D detection.
pub fn reprojection_error(
    skeleton: &Skeleton3D,
    observations: &[Skeleton2D],
    cameras: &[Camera],
    min_confidence: f64,
) -> Result<ReprojectionReport, GeometryError> {
    let m = check_observations(observations, cameras.len())?;
    if skeleton.joints.len() != m {
        return Err(GeometryError::MismatchedInputs(format!(
            "skeleton has {} joints, observations {}",
            skeleton.joints.len(),
            m
        )));
    }
    if let Some(o) = observations.iter().find(|o| o.frame != skeleton.frame) {
        return Err(GeometryError::MismatchedInputs(format!(
            "observation frame {} differs from skeleton frame {}",
            o.frame, skeleton.frame
        )));
    }

    let mut joint_sum = vec![(0.0, 0usize); m];
    let mut camera_sum = vec![(0.0, 0usize); cameras.len()];
    let (mut total, mut total_sq, mut count) = (0.0, 0.0, 0usize);
    for (j, point) in skeleton.joints.iter().enumerate() {
        let Some(point) = point else { continue };
        for (c, (obs, cam)) in observations.iter().zip(cameras).enumerate() {
            let Some(h) = obs.usable(j, min_confidence) else {
                continue;
            };
            let Ok(q) = project(point, cam) else { continue };
            let d = nalgebra::distance(&q, &h);
            joint_sum[j].0 += d;
            joint_sum[j].1 += 1;
            camera_sum[c].0 += d;
            camera_sum[c].1 += 1;
            total += d;
            total_sq += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(GeometryError::EmptyEvaluation);
    }
    let mean_of = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(ReprojectionReport {
        per_joint: joint_sum.into_iter().map(mean_of).collect(),
        per_camera: camera_sum.into_iter().map(mean_of).collect(),
        mean: total / count as f64,
        rms: (total_sq / count as f64).sqrt(),
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::super::camera::{Intrinsics, Pose};
    use super::super::skeleton::Joint2D;
    use super::*;
    use nalgebra::{Point3, Vector3};

    fn rig() -> Vec<Camera> {
        (0..4)
            .map(|i| {
                let a = (i as f64 * 90.0).to_radians();
                let eye = Point3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.0);
                Camera::new(
                    Intrinsics::centered(500.0, 640, 480).unwrap(),
                    Pose::look_at(&eye, &Point3::new(0.0, 0.0, 1.0), &Vector3::z()).unwrap(),
                )
            })
            .collect()
    }

    fn truth() -> Skeleton3D {
        Skeleton3D::new(
            3,
            vec![
                Some(Point3::new(0.0, 0.0, 1.0)),
                Some(Point3::new(0.2, -0.1, 1.4)),
                None,
            ],
        )
    }

    fn observe(s: &Skeleton3D, cams: &[Camera], shift: f64) -> Vec<Skeleton2D> {
        cams.iter()
            .enumerate()
            .map(|(c, cam)| {
                let joints = s
                    .joints
                    .iter()
                    .map(|p| {
                        let h = project(&p.unwrap_or(Point3::new(0.1, 0.1, 0.9)), cam).unwrap();
                        Some(Joint2D::new(h.x + shift, h.y, 1.0))
                    })
                    .collect();
                Skeleton2D::new(s.frame, c, joints)
            })
            .collect()
    }

    #[test]
    fn exact_skeleton_has_zero_error() {
        let cams = rig();
        let s = truth();
        let r = reprojection_error(&s, &observe(&s, &cams, 0.0), &cams, 0.1).unwrap();
        assert!(r.mean < 1e-9);
        assert_eq!(r.count, 8);
        assert!(r.per_joint[2].is_none());
    }

    #[test]
    fn uniform_shift_is_mean_error() {
        let cams = rig();
        let s = truth();
        let r = reprojection_error(&s, &observe(&s, &cams, 3.0), &cams, 0.1).unwrap();
        assert!((r.mean - 3.0).abs() < 1e-9);
        assert!((r.rms - 3.0).abs() < 1e-9);
    }

    #[test]
    fn perturbed_camera_carries_the_error() {
        let cams = rig();
        let s = truth();
        let obs = observe(&s, &cams, 0.0);
        let mut bent = cams.clone();
        bent[2].pose = bent[2]
            .pose
            .rotated_about_center(&Vector3::new(0.0, 1f64.to_radians(), 0.0));
        let r = reprojection_error(&s, &obs, &bent, 0.1).unwrap();
        for (c, e) in r.per_camera.iter().enumerate() {
            if c == 2 {
                assert!(e.unwrap() > 1.0);
            } else {
                assert!(e.unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn nothing_to_evaluate() {
        let cams = rig();
        let s = Skeleton3D::unresolved(3, 3);
        assert!(matches!(
            reprojection_error(&s, &observe(&truth(), &cams, 0.0), &cams, 0.1),
            Err(GeometryError::EmptyEvaluation)
        ));
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let cams = rig();
        let mut s = truth();
        let obs = observe(&s, &cams, 0.0);
        s.frame = 4;
        assert!(reprojection_error(&s, &obs, &cams, 0.1).is_err());
    }
}
