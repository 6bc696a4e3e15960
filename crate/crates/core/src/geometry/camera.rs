use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Points closer than this to a camera's principal plane cannot be projected.
pub const DEPTH_EPSILON: f64 = 1e-9;

/// Tolerance on `‖RᵀR − I‖_F` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Distortion-free pinhole intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            f64::from(width) / 2.0,
            f64::from(height) / 2.0,
            f64::from(width),
            f64::from(height),
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the sensor".into(),
            ));
        }
        Ok(())
    }

    /// The upper-triangular camera matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, pixel: &Point2<f64>, margin: f64) -> bool {
        pixel.x >= -margin && pixel.y >= -margin && pixel.x < self.width + margin && pixel.y < self.height + margin
    }
}

/// Rigid world-to-camera transform: `x_cam = R·x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self { rotation, translation };
        pose.validate(ROTATION_TOLERANCE)?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`; image y points away from `up`.
    pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < DEPTH_EPSILON {
            return Err(GeometryError::InvalidPose("eye coincides with target".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(up);
        if right.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("up is parallel to the view axis".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Ok(Self { rotation, translation })
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn validate(&self, tolerance: f64) -> Result<(), GeometryError> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let err = self.orthonormality_error();
        if err > tolerance {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidPose("rotation is a reflection".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Image-plane normal: the camera +Z axis expressed in world coordinates.
    pub fn viewing_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn transform_point(&self, point: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * point.coords + self.translation)
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let m = self.matrix();
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Inverse of [`Pose::to_row_major`]; does not validate.
    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    /// Re-projects the rotation onto SO(3) (closest rotation in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        let rotation = Rotation3::from_matrix(&self.rotation).into_inner();
        Self {
            rotation,
            translation: self.translation,
        }
    }

    /// Left-multiplies the rotation by `exp([omega]×)` keeping the camera center fixed.
    pub fn rotated_about_center(&self, omega: &Vector3<f64>) -> Self {
        let center = self.center();
        let delta = Rotation3::new(*omega).into_inner();
        let rotation = delta * self.rotation;
        Self {
            rotation,
            translation: -(rotation * center.coords),
        }
    }
}

/// Per-device rigid transform into the shared world frame.
///
/// Stored as the map from shared-world coordinates into the device's local
/// (SLAM) frame, `x_local = R·x_world + t`, so that a local world-to-camera
/// pose composes into a globalized one by a single product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl GlobalTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Pose::new(rotation, translation)?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(axis, angle).into_inner(),
            translation,
        }
    }

    /// `P' = P_local ∘ T`.
    pub fn globalize(&self, local: &Pose) -> Pose {
        Pose {
            rotation: local.rotation * self.rotation,
            translation: local.rotation * self.translation + local.translation,
        }
    }

    /// Expresses a world-frame pose in this device's local frame.
    pub fn localize(&self, global: &Pose) -> Pose {
        let rotation = global.rotation * self.rotation.transpose();
        Pose {
            rotation,
            translation: global.translation - rotation * self.translation,
        }
    }
}

/// A globalized camera: intrinsics `K_c` plus world-to-camera pose `P'_{i,c}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    /// `K·[R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        self.intrinsics.matrix() * self.pose.matrix()
    }

    pub fn project(&self, point: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
        project(point, self)
    }

    /// Depth of `point` along the viewing axis.
    pub fn depth(&self, point: &Point3<f64>) -> f64 {
        self.pose.transform_point(point).z
    }
}

/// Pinhole projection of a world point to inhomogeneous pixel coordinates.
///
/// No clamping is applied; points off the sensor produce out-of-range pixels.
pub fn project(point: &Point3<f64>, cam: &Camera) -> Result<Point2<f64>, GeometryError> {
    let p = cam.pose.transform_point(point);
    if !(p.z > DEPTH_EPSILON) {
        return Err(GeometryError::DegenerateProjection { depth: p.z });
    }
    let k = &cam.intrinsics;
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Angle in degrees between two cameras' image-plane normals.
pub fn pair_angle(a: &Pose, b: &Pose) -> f64 {
    let na = a.viewing_axis();
    let nb = b.viewing_axis();
    let cos = na.dot(&nb) / (na.norm() * nb.norm());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Unordered camera pairs `{c, c'}` (`c < c'`) whose normal angle lies in
/// `[min_deg, max_deg]`, in lexicographic order.
pub fn valid_pairs(poses: &[Pose], min_deg: f64, max_deg: f64) -> Result<Vec<(usize, usize)>, GeometryError> {
    if poses.len() < 2 {
        return Err(GeometryError::InsufficientCameras(poses.len()));
    }
    if !(min_deg <= max_deg) {
        return Err(GeometryError::InvalidThresholds {
            min: min_deg,
            max: max_deg,
        });
    }
    let mut pairs = Vec::new();
    for a in 0..poses.len() {
        for b in (a + 1)..poses.len() {
            let alpha = pair_angle(&poses[a], &poses[b]);
            if alpha >= min_deg && alpha <= max_deg {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn yaw(deg: f64) -> Pose {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians()).into_inner();
        Pose::new(r, Vector3::zeros()).unwrap()
    }

    fn unit_camera(fx: f64, cx: f64, cy: f64) -> Camera {
        Camera::new(
            Intrinsics {
                fx,
                fy: fx,
                cx,
                cy,
                width: 2.0 * cx.max(1.0),
                height: 2.0 * cy.max(1.0),
            },
            Pose::identity(),
        )
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = unit_camera(1.0, 0.0, 0.0);
        let px = project(&Point3::new(0.0, 0.0, 5.0), &cam).unwrap();
        assert_eq!(px, Point2::new(0.0, 0.0));
    }

    #[test]
    fn projects_offset_point() {
        let cam = unit_camera(100.0, 320.0, 240.0);
        let px = project(&Point3::new(1.0, 0.0, 2.0), &cam).unwrap();
        assert_abs_diff_eq!(px.x, 370.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.y, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_degenerate() {
        let cam = unit_camera(100.0, 320.0, 240.0);
        assert!(matches!(
            project(&Point3::new(0.0, 0.0, -1.0), &cam),
            Err(GeometryError::DegenerateProjection { .. })
        ));
        assert!(project(&Point3::new(0.0, 0.0, 0.0), &cam).is_err());
    }

    #[test]
    fn pair_angles_of_canonical_rotations() {
        assert_abs_diff_eq!(pair_angle(&yaw(0.0), &yaw(0.0)), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(pair_angle(&yaw(0.0), &yaw(90.0)), 90.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pair_angle(&yaw(0.0), &yaw(180.0)), 180.0, epsilon = 1e-6);
    }

    fn ring(n: usize, step_deg: f64) -> Vec<Pose> {
        let target = Point3::origin();
        (0..n)
            .map(|i| {
                let a = (i as f64 * step_deg).to_radians();
                let eye = Point3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.0);
                Pose::look_at(&eye, &target, &Vector3::z()).unwrap()
            })
            .collect()
    }

    #[test]
    fn sixty_degree_ring_is_fully_valid() {
        let poses = ring(3, 60.0);
        assert_abs_diff_eq!(pair_angle(&poses[0], &poses[1]), 60.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pair_angle(&poses[0], &poses[2]), 120.0, epsilon = 1e-9);
        let pairs = valid_pairs(&poses, 30.0, 150.0).unwrap();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn identical_cameras_are_not_a_pair() {
        let poses = vec![Pose::identity(), Pose::identity()];
        assert!(valid_pairs(&poses, 10.0, 160.0).unwrap().is_empty());
    }

    #[test]
    fn full_range_admits_all_pairs() {
        let poses = ring(6, 37.0);
        assert_eq!(valid_pairs(&poses, 0.0, 180.0).unwrap().len(), 15);
    }

    #[test]
    fn single_camera_is_insufficient() {
        assert!(matches!(
            valid_pairs(&[Pose::identity()], 0.0, 180.0),
            Err(GeometryError::InsufficientCameras(1))
        ));
    }

    #[test]
    fn look_at_points_axis_at_target() {
        let eye = Point3::new(4.0, 1.0, 1.5);
        let target = Point3::new(0.0, 0.0, 1.0);
        let pose = Pose::look_at(&eye, &target, &Vector3::z()).unwrap();
        pose.validate(1e-12).unwrap();
        assert_abs_diff_eq!(pose.center(), eye, epsilon = 1e-12);
        let k = Intrinsics::centered(500.0, 640, 480).unwrap();
        let px = project(&target, &Camera::new(k, pose)).unwrap();
        assert_abs_diff_eq!(px.x, 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(px.y, 240.0, epsilon = 1e-9);
        // world up maps to image up (smaller v)
        let above = project(&Point3::new(0.0, 0.0, 1.5), &Camera::new(k, pose)).unwrap();
        assert!(above.y < 240.0);
    }

    #[test]
    fn globalize_then_localize_round_trips() {
        let t = GlobalTransform::from_axis_angle(&Vector3::z_axis(), 0.7, Vector3::new(0.3, -1.0, 2.0));
        let local = yaw(25.0);
        let global = t.globalize(&local);
        global.validate(1e-12).unwrap();
        let back = t.localize(&global);
        assert_abs_diff_eq!(back.rotation, local.rotation, epsilon = 1e-12);
        assert_abs_diff_eq!(back.translation, local.translation, epsilon = 1e-12);
        // a world point seen through either route lands in the same camera coordinates
        let p = Point3::new(0.2, 0.5, 3.0);
        let local_point = Point3::from(t.rotation * p.coords + t.translation);
        assert_abs_diff_eq!(
            global.transform_point(&p),
            local.transform_point(&local_point),
            epsilon = 1e-12
        );
    }

    #[test]
    fn reflection_is_rejected() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 3.0, 1.0, 2.0, 2.0).is_err());
        let k = Intrinsics::centered(500.0, 640, 480).unwrap();
        let m = k.matrix();
        assert_eq!(m[(2, 2)], 1.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn row_major_round_trip() {
        let pose = Pose::look_at(&Point3::new(1.0, 2.0, 3.0), &Point3::origin(), &Vector3::z()).unwrap();
        assert_eq!(Pose::from_row_major(&pose.to_row_major()), pose);
    }
}
