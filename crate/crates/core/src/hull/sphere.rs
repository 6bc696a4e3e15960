use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{Mask, Silhouette};
use crate::geometry::{Camera, GeometryError, Intrinsics, Pose};

/// A sphere seen by a ring of cameras in its equatorial plane, with exact
/// silhouettes. Used to validate carving against a known solid.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereScene {
    pub center: Point3<f64>,
    pub radius: f64,
    pub cameras: Vec<Camera>,
}

impl SphereScene {
    /// `count` cameras evenly spaced on a circle of `distance` around the sphere.
    pub fn ring(
        center: Point3<f64>,
        radius: f64,
        count: usize,
        distance: f64,
        intrinsics: Intrinsics,
    ) -> Result<Self, GeometryError> {
        let cameras = (0..count)
            .map(|c| {
                let a = TAU * c as f64 / count as f64;
                let eye = center + Vector3::new(a.cos(), a.sin(), 0.0) * distance;
                Ok(Camera::new(intrinsics, Pose::look_at(&eye, &center, &Vector3::z())?))
            })
            .collect::<Result<_, GeometryError>>()?;
        Ok(Self {
            center,
            radius,
            cameras,
        })
    }

    /// Radius 0.5 m, six 640×480 cameras at 4 m.
    pub fn standard() -> Self {
        let k = Intrinsics::centered(600.0, 640, 480).expect("valid intrinsics");
        Self::ring(Point3::origin(), 0.5, 6, 4.0, k).expect("valid ring")
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (p - self.center).norm() <= self.radius
    }

    pub fn silhouettes(&self) -> Vec<Silhouette> {
        self.cameras
            .iter()
            .map(|camera| Silhouette {
                camera: *camera,
                mask: sphere_mask(&self.center, self.radius, camera),
            })
            .collect()
    }
}

/// Exact mask of a sphere: pixel `(u, v)` is set when some ray through the
/// square `[u, u+1) × [v, v+1)` meets the sphere, so the floor-rounded
/// projection of any point of the sphere lands on a set pixel.
pub fn sphere_mask(center: &Point3<f64>, radius: f64, cam: &Camera) -> Mask {
    let (w, h) = (cam.intrinsics.width as u32, cam.intrinsics.height as u32);
    let s = cam.pose.transform_point(center).coords;
    let dist = s.norm();
    if dist <= radius {
        return Mask::full(w, h);
    }
    let half_angle = (radius / dist).asin();
    let axis = s / dist;
    let k = cam.intrinsics;
    let angle = |x: f64, y: f64| -> f64 {
        let ray = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0).normalize();
        ray.dot(&axis).clamp(-1.0, 1.0).acos()
    };
    // angular size bound of one pixel
    let slack = 1.5 * std::f64::consts::SQRT_2 / k.fx.min(k.fy);
    let pixels: Vec<bool> = (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..w).map(move |u| {
                let (x, y) = (u as f64, v as f64);
                let mid = angle(x + 0.5, y + 0.5);
                if mid > half_angle + slack {
                    return false;
                }
                if mid <= half_angle {
                    return true;
                }
                square_min_angle(&angle, x, y) <= half_angle
            })
        })
        .collect();
    Mask::from_pixels(w, h, pixels).expect("sized to the image")
}

/// Minimum of the ray angle over a unit pixel square. Its sublevel sets are
/// ellipses, so the minimum is interior only when the axis projects inside;
/// otherwise it lies on an edge, where the angle is unimodal.
fn square_min_angle(angle: &impl Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
    let edges = [
        ((x, y), (x + 1.0, y)),
        ((x + 1.0, y), (x + 1.0, y + 1.0)),
        ((x, y + 1.0), (x + 1.0, y + 1.0)),
        ((x, y), (x, y + 1.0)),
    ];
    edges
        .iter()
        .map(|&((x0, y0), (x1, y1))| {
            let f = |t: f64| angle(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) <= f(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
        })
        .fold(f64::INFINITY, f64::min)
}
