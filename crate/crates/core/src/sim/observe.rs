use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::Capsule;
use crate::geometry::{Camera, Joint2D, Skeleton2D, Skeleton3D, DEPTH_EPSILON};
use crate::hull::Mask;

/// Noise-free detection: exact projections with confidence 1. Joints behind
/// the camera or outside the image are MISSING.
pub fn detect_joints(truth: &Skeleton3D, cam: &Camera, camera_index: usize) -> Skeleton2D {
    let joints = truth
        .joints
        .iter()
        .map(|j| {
            let p = cam.project(j.as_ref()?).ok()?;
            cam.intrinsics.contains(&p, 0.0).then(|| Joint2D::new(p.x, p.y, 1.0))
        })
        .collect();
    Skeleton2D::new(truth.frame, camera_index, joints)
}

/// Detector model: with probability `miss_rate` the actor is not detected at
/// all; otherwise every visible joint gets i.i.d. `N(0, σ²)` pixel noise.
///
/// The miss draw and two normals per joint are always consumed, so the
/// noise sequence does not depend on the miss rate.
pub fn observe_joints<R: Rng + ?Sized>(
    truth: &Skeleton3D,
    cam: &Camera,
    camera_index: usize,
    sigma_px: f64,
    miss_rate: f64,
    rng: &mut R,
) -> Skeleton2D {
    let missed = rng.gen::<f64>() < miss_rate;
    let clean = detect_joints(truth, cam, camera_index);
    let joints: Vec<Option<Joint2D>> = clean
        .joints
        .iter()
        .map(|j| {
            let (dx, dy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            j.map(|j| Joint2D::new(j.position.x + sigma_px * dx, j.position.y + sigma_px * dy, j.confidence))
        })
        .collect();
    if missed {
        return Skeleton2D::missing(truth.frame, camera_index, truth.joints.len());
    }
    Skeleton2D::new(truth.frame, camera_index, joints)
}

/// Extra radius that makes a capsule cover every pixel it touches when only
/// pixel-center rays are tested: half a pixel diagonal at depth `depth`.
pub fn silhouette_margin(cam: &Camera, depth: f64) -> f64 {
    depth * std::f64::consts::FRAC_1_SQRT_2 / cam.intrinsics.fx.min(cam.intrinsics.fy)
}

/// Closest distance between the segments `p1–q1` and `p2–q2`.
fn segment_distance(p1: &Point3<f64>, q1: &Point3<f64>, p2: &Point3<f64>, q2: &Point3<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let (a, e, f) = (d1.norm_squared(), d2.norm_squared(), d2.dot(&r));
    let (s, t) = if a <= f64::EPSILON && e <= f64::EPSILON {
        (0.0, 0.0)
    } else if a <= f64::EPSILON {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

struct Footprint {
    capsule: Capsule,
    radius: f64,
    u: (u32, u32),
    v: (u32, u32),
}

fn footprint(c: &Capsule, cam: &Camera) -> Option<Footprint> {
    let (w, h) = (cam.intrinsics.width as u32, cam.intrinsics.height as u32);
    let far = cam.depth(&c.a).max(cam.depth(&c.b)) + c.radius;
    if far <= DEPTH_EPSILON {
        return None;
    }
    let radius = c.radius + silhouette_margin(cam, far);
    let lo = c.a.coords.inf(&c.b.coords).add_scalar(-radius);
    let hi = c.a.coords.sup(&c.b.coords).add_scalar(radius);
    let corners: Vec<Point3<f64>> = (0..8)
        .map(|k| {
            Point3::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    if corners.iter().all(|p| cam.depth(p) <= DEPTH_EPSILON) {
        return None;
    }
    let projected: Option<Vec<_>> = corners.iter().map(|p| cam.project(p).ok()).collect();
    let (u, v) = match projected {
        // straddles the camera plane: test the whole image
        None => ((0, w), (0, h)),
        Some(px) => {
            let clampu = |x: f64| x.floor().clamp(0.0, f64::from(w)) as u32;
            let clampv = |x: f64| x.floor().clamp(0.0, f64::from(h)) as u32;
            let (u0, u1) = px
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
            let (v0, v1) = px
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
            (
                (clampu(u0), (clampu(u1) + 1).min(w)),
                (clampv(v0), (clampv(v1) + 1).min(h)),
            )
        }
    };
    Some(Footprint {
        capsule: *c,
        radius,
        u,
        v,
    })
}

/// Binary silhouette: a pixel is set when the ray through its center passes
/// within the (margin-dilated) radius of any capsule.
pub fn render_silhouette(capsules: &[Capsule], cam: &Camera) -> Mask {
    let (w, h) = (cam.intrinsics.width as u32, cam.intrinsics.height as u32);
    let feet: Vec<Footprint> = capsules.iter().filter_map(|c| footprint(c, cam)).collect();
    let origin = cam.pose.center();
    let k_inv = cam.intrinsics.matrix().try_inverse().expect("valid intrinsics");
    let r_t = cam.pose.rotation.transpose();
    let reach = feet
        .iter()
        .map(|f| (f.capsule.a - origin).norm().max((f.capsule.b - origin).norm()) + f.radius)
        .fold(0.0, f64::max);

    let rows: Vec<Vec<bool>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = vec![false; w as usize];
            for f in feet.iter().filter(|f| (f.v.0..f.v.1).contains(&v)) {
                for u in f.u.0..f.u.1 {
                    if row[u as usize] {
                        continue;
                    }
                    let ray = r_t * (k_inv * Vector3::new(f64::from(u) + 0.5, f64::from(v) + 0.5, 1.0));
                    let end = origin + ray.normalize() * (reach + 1.0);
                    if segment_distance(&origin, &end, &f.capsule.a, &f.capsule.b) <= f.radius {
                        row[u as usize] = true;
                    }
                }
            }
            row
        })
        .collect();
    Mask::from_pixels(w, h, rows.concat()).expect("row lengths match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};
    use crate::sim::{stream_rng, ActorModel, MotionScript, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam_at(eye: Point3<f64>, target: Point3<f64>) -> Camera {
        Camera::new(
            Intrinsics::centered(600.0, 640, 480).unwrap(),
            Pose::look_at(&eye, &target, &Vector3::z()).unwrap(),
        )
    }

    fn skeleton() -> Skeleton3D {
        let actor = ActorModel::body25(MotionScript::walk(4.0, 0.3, 1.0));
        crate::sim::actor_pose_at(1.3, &actor, 0)
    }

    #[test]
    fn noiseless_detection_is_the_projection() {
        let truth = skeleton();
        let cam = cam_at(Point3::new(4.0, 0.0, 1.5), Point3::new(0.0, 0.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe_joints(&truth, &cam, 0, 0.0, 0.0, &mut rng);
        for (o, j) in obs.joints.iter().zip(&truth.joints) {
            let p = cam.project(j.as_ref().unwrap()).unwrap();
            assert_eq!(o.unwrap().position, p);
        }
        let gone = observe_joints(&truth, &cam, 0, 0.0, 1.0, &mut rng);
        assert_eq!(gone.present_count(), 0);
    }

    #[test]
    fn out_of_frame_joints_are_missing() {
        let truth = skeleton();
        // close enough that the feet leave the image
        let cam = cam_at(Point3::new(1.0, 0.0, 1.6), Point3::new(0.0, 0.0, 1.6));
        let obs = detect_joints(&truth, &cam, 0);
        assert!(obs.present_count() > 0 && obs.present_count() < 25);
        assert!(obs.joints[11].is_none());
    }

    #[test]
    fn pixel_noise_has_the_configured_std() {
        let truth = Skeleton3D::new(0, vec![Some(Point3::new(0.0, 0.0, 1.0))]);
        let cam = cam_at(Point3::new(4.0, 0.0, 1.0), Point3::new(0.0, 0.0, 1.0));
        let exact = cam.project(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        let mut rng = stream_rng(5, Stream::Detector, 0, 0);
        let dx: Vec<f64> = (0..10_000)
            .map(|_| {
                observe_joints(&truth, &cam, 0, 2.0, 0.0, &mut rng).joints[0]
                    .unwrap()
                    .position
                    .x
                    - exact.x
            })
            .collect();
        let mean = dx.iter().sum::<f64>() / dx.len() as f64;
        let std = (dx.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dx.len() - 1) as f64).sqrt();
        assert!((std / 2.0 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn centered_capsule_is_mirror_symmetric() {
        let cam = cam_at(Point3::new(0.0, -4.0, 1.0), Point3::new(0.0, 0.0, 1.0));
        let c = Capsule {
            a: Point3::new(0.0, 0.0, 0.5),
            b: Point3::new(0.0, 0.0, 1.5),
            radius: 0.15,
        };
        let m = render_silhouette(&[c], &cam);
        assert!(m.count() > 1000);
        let mismatched = (0..480)
            .flat_map(|v| (0..640).map(move |u| (u, v)))
            .filter(|&(u, v)| m.get(u, v) != m.get(639 - u, v))
            .count();
        assert!(mismatched <= 4, "{mismatched} asymmetric pixels");
    }

    #[test]
    fn doubling_distance_quarters_the_area() {
        let c = Capsule {
            a: Point3::new(0.0, 0.0, 0.75),
            b: Point3::new(0.0, 0.0, 1.25),
            radius: 0.25,
        };
        let near = render_silhouette(&[c], &cam_at(Point3::new(4.0, 0.0, 1.0), Point3::new(0.0, 0.0, 1.0))).count();
        let far = render_silhouette(&[c], &cam_at(Point3::new(8.0, 0.0, 1.0), Point3::new(0.0, 0.0, 1.0))).count();
        let ratio = near as f64 / far as f64;
        assert!((ratio / 4.0 - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn actor_behind_the_camera_is_invisible() {
        let actor = ActorModel::body25(MotionScript::rest());
        let cam = cam_at(Point3::new(4.0, 0.0, 1.0), Point3::new(8.0, 0.0, 1.0));
        assert_eq!(render_silhouette(&actor.capsules_at(0.0), &cam).count(), 0);
    }

    #[test]
    fn capsule_points_always_land_in_the_mask() {
        let actor = ActorModel::body25(MotionScript::walk(4.0, 0.3, 1.0));
        let capsules = actor.capsules_at(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..6 {
            let a = std::f64::consts::TAU * k as f64 / 6.0;
            let cam = cam_at(
                Point3::new(4.0 * a.cos(), 4.0 * a.sin(), 1.5),
                Point3::new(0.0, 0.0, 1.0),
            );
            let mask = render_silhouette(&capsules, &cam);
            for c in &capsules {
                for _ in 0..300 {
                    let s: f64 = rng.gen();
                    let dir = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal)).normalize();
                    let p = c.a + (c.b - c.a) * s + dir * (c.radius * rng.gen::<f64>().cbrt());
                    let px = cam.project(&p).unwrap();
                    if cam.intrinsics.contains(&px, 0.0) {
                        assert!(mask.contains(px.x, px.y), "point {p} missed at {px}");
                    }
                }
            }
        }
    }

    #[test]
    fn segment_distance_cases() {
        let o = Point3::origin();
        let d = segment_distance(
            &o,
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(0.5, 1.0, -1.0),
            &Point3::new(0.5, 1.0, 1.0),
        );
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_distance(
            &o,
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(2.0, 0.0, 0.0),
            &Point3::new(3.0, 0.0, 0.0),
        );
        assert!((d - 1.0).abs() < 1e-15);
    }
}
