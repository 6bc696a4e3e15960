use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point2, Point3, RowVector4};
use serde::{Deserialize, Serialize};

use super::camera::{Camera, DEPTH_EPSILON};
use super::skeleton::Skeleton2D;
use super::GeometryError;

/// Second-smallest singular value of the DLT system, relative to the largest,
/// below which the two rays are treated as coincident.
pub const DLT_RANK_TOLERANCE: f64 = 1e-10;

/// Maps pixels into a unit-scale frame centered on the principal point.
fn normalizing_transform(cam: &Camera) -> Matrix3<f64> {
    let k = &cam.intrinsics;
    let s = std::f64::consts::SQRT_2 / (0.5 * k.width.hypot(k.height));
    Matrix3::new(s, 0.0, -s * k.cx, 0.0, s, -s * k.cy, 0.0, 0.0, 1.0)
}

fn dlt_rows(p: &Matrix3x4<f64>, x: f64, y: f64) -> [RowVector4<f64>; 2] {
    let r0 = p.row(0).into_owned();
    let r1 = p.row(1).into_owned();
    let r2 = p.row(2).into_owned();
    let mut a = r2 * x - r0;
    let mut b = r2 * y - r1;
    let na = a.norm();
    let nb = b.norm();
    if na > 0.0 {
        a /= na;
    }
    if nb > 0.0 {
        b /= nb;
    }
    [a, b]
}

/// Two-view linear triangulation (homogeneous DLT) with normalized pixel coordinates.
pub fn triangulate_pair(
    h_a: &Point2<f64>,
    h_b: &Point2<f64>,
    cam_a: &Camera,
    cam_b: &Camera,
) -> Result<Point3<f64>, GeometryError> {
    let mut a = Matrix4::zeros();
    for (row, (h, cam)) in [(h_a, cam_a), (h_b, cam_b)].into_iter().enumerate() {
        let t = normalizing_transform(cam);
        let p = t * cam.projection_matrix();
        let hn = t * h.to_homogeneous();
        let [r0, r1] = dlt_rows(&p, hn.x / hn.z, hn.y / hn.z);
        a.set_row(2 * row, &r0);
        a.set_row(2 * row + 1, &r1);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::TriangulationDegenerate);
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::TriangulationDegenerate)?;
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[2]];
    if !(largest > 0.0) || second_smallest <= DLT_RANK_TOLERANCE * largest {
        return Err(GeometryError::TriangulationDegenerate);
    }

    let x = v_t.row(order[3]);
    let w = x[3];
    let scale = x.fixed_columns::<3>(0).norm();
    if w.abs() <= 1e-14 * scale {
        return Err(GeometryError::TriangulationDegenerate);
    }
    let point = Point3::new(x[0] / w, x[1] / w, x[2] / w);
    if !point.coords.iter().all(|v| v.is_finite())
        || cam_a.depth(&point) <= DEPTH_EPSILON
        || cam_b.depth(&point) <= DEPTH_EPSILON
    {
        return Err(GeometryError::TriangulationDegenerate);
    }
    Ok(point)
}

/// One pairwise triangulation `ω^m_{c,c'}` together with its source pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub point: Point3<f64>,
    pub pair: (usize, usize),
}

/// Per-joint sets `Ω^m` of pairwise triangulations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JointCloud {
    pub joints: Vec<Vec<CloudPoint>>,
}

impl JointCloud {
    pub fn with_joints(joint_count: usize) -> Self {
        Self {
            joints: vec![Vec::new(); joint_count],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn total_points(&self) -> usize {
        self.joints.iter().map(Vec::len).sum()
    }
}

pub(crate) fn check_observations(observations: &[Skeleton2D], cameras: usize) -> Result<usize, GeometryError> {
    if observations.len() != cameras {
        return Err(GeometryError::MismatchedInputs(format!(
            "{} observations for {} cameras",
            observations.len(),
            cameras
        )));
    }
    let m = observations.first().map(Skeleton2D::len).unwrap_or(0);
    if observations.iter().any(|o| o.len() != m) {
        return Err(GeometryError::MismatchedInputs(
            "observations disagree on joint count".into(),
        ));
    }
    Ok(m)
}

/// Triangulates every joint visible in both views of every pair in `pairs`.
///
/// `observations[c]` belongs to `cameras[c]`. Pairs whose rays are degenerate
/// for a joint contribute nothing for that joint.
pub fn build_joint_cloud(
    observations: &[Skeleton2D],
    cameras: &[Camera],
    pairs: &[(usize, usize)],
    min_confidence: f64,
) -> Result<JointCloud, GeometryError> {
    let m = check_observations(observations, cameras.len())?;
    let mut cloud = JointCloud::with_joints(m);
    for &(a, b) in pairs {
        if a >= cameras.len() || b >= cameras.len() || a == b {
            return Err(GeometryError::MismatchedInputs(format!("bad pair ({a}, {b})")));
        }
        for (joint, set) in cloud.joints.iter_mut().enumerate() {
            let (Some(ha), Some(hb)) = (
                observations[a].usable(joint, min_confidence),
                observations[b].usable(joint, min_confidence),
            ) else {
                continue;
            };
            match triangulate_pair(&ha, &hb, &cameras[a], &cameras[b]) {
                Ok(point) => set.push(CloudPoint { point, pair: (a, b) }),
                Err(GeometryError::TriangulationDegenerate) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(cloud)
}

/// Center of mass `μ^m` of each joint's triangulations; `None` marks the zero
/// sentinel of an empty set, which bundle adjustment skips.
pub fn centroid_init(cloud: &JointCloud) -> Vec<Option<Point3<f64>>> {
    cloud
        .joints
        .iter()
        .map(|set| {
            if set.is_empty() {
                return None;
            }
            let sum = set
                .iter()
                .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.point.coords);
            Some(Point3::from(sum / set.len() as f64))
        })
        .collect()
}

/// The zero point used for excluded joints.
pub fn sentinel_or_point(init: &Option<Point3<f64>>) -> Point3<f64> {
    init.unwrap_or_else(Point3::origin)
}

#[cfg(test)]
mod tests {
    use super::super::camera::{project, Intrinsics, Pose};
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ring_camera(angle_deg: f64, radius: f64, focal: f64) -> Camera {
        let a = angle_deg.to_radians();
        let eye = Point3::new(radius * a.cos(), radius * a.sin(), 0.0);
        let pose = Pose::look_at(&eye, &Point3::origin(), &Vector3::z()).unwrap();
        Camera::new(Intrinsics::centered(focal, 640, 480).unwrap(), pose)
    }

    #[test]
    fn noiseless_two_view_recovers_point() {
        let a = ring_camera(0.0, 3.0, 500.0);
        let b = ring_camera(60.0, 3.0, 500.0);
        let x = Point3::new(0.1, -0.2, 0.3);
        let p = triangulate_pair(&project(&x, &a).unwrap(), &project(&x, &b).unwrap(), &a, &b).unwrap();
        assert!((p - x).norm() < 1e-8);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let a = ring_camera(0.0, 3.0, 500.0);
        let x = Point3::new(0.1, -0.2, 0.3);
        let h = project(&x, &a).unwrap();
        assert!(matches!(
            triangulate_pair(&h, &h, &a, &a),
            Err(GeometryError::TriangulationDegenerate)
        ));
    }

    #[test]
    fn one_pixel_noise_at_two_meters_stays_under_two_centimeters() {
        let a = ring_camera(0.0, 2.0, 500.0);
        let b = ring_camera(60.0, 2.0, 500.0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut errors: Vec<f64> = (0..1000)
            .map(|_| {
                let x = Point3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                );
                let mut ha = project(&x, &a).unwrap();
                let mut hb = project(&x, &b).unwrap();
                ha.x += noise.sample(&mut rng);
                ha.y += noise.sample(&mut rng);
                hb.x += noise.sample(&mut rng);
                hb.y += noise.sample(&mut rng);
                (triangulate_pair(&ha, &hb, &a, &b).unwrap() - x).norm()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        assert!(median < 0.02, "median error {median}");
    }

    #[test]
    fn centroid_of_two_points() {
        let mut cloud = JointCloud::with_joints(3);
        cloud.joints[0].push(CloudPoint {
            point: Point3::new(1.0, 1.0, 1.0),
            pair: (0, 1),
        });
        cloud.joints[0].push(CloudPoint {
            point: Point3::new(3.0, 3.0, 3.0),
            pair: (0, 2),
        });
        cloud.joints[2].push(CloudPoint {
            point: Point3::new(-1.0, 0.5, 2.0),
            pair: (1, 2),
        });
        let init = centroid_init(&cloud);
        assert_eq!(init[0], Some(Point3::new(2.0, 2.0, 2.0)));
        assert_eq!(init[1], None);
        assert_eq!(sentinel_or_point(&init[1]), Point3::origin());
        assert_eq!(init[2], Some(Point3::new(-1.0, 0.5, 2.0)));
    }

    #[test]
    fn cloud_entries_come_from_given_pairs() {
        let cams: Vec<Camera> = (0..4).map(|i| ring_camera(i as f64 * 60.0, 3.0, 500.0)).collect();
        let x = Point3::new(0.0, 0.1, 0.2);
        let obs: Vec<Skeleton2D> = cams
            .iter()
            .enumerate()
            .map(|(c, cam)| {
                let h = project(&x, cam).unwrap();
                Skeleton2D::new(0, c, vec![Some(super::super::Joint2D::new(h.x, h.y, 1.0)), None])
            })
            .collect();
        let pairs = vec![(0, 1), (1, 3)];
        let cloud = build_joint_cloud(&obs, &cams, &pairs, 0.1).unwrap();
        assert_eq!(cloud.joints[0].len(), 2);
        assert!(cloud.joints[1].is_empty());
        for p in &cloud.joints[0] {
            assert!(pairs.contains(&p.pair));
            assert!((p.point - x).norm() < 1e-8);
        }
    }
}
