use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream_rng, SimError, Stream};
use crate::geometry::{Camera, Intrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MotionClass {
    Static,
    Moving,
}

/// Handheld shake: small sinusoidal wobble of position and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shake {
    pub position_m: f64,
    pub rotation_deg: f64,
    pub frequency_hz: f64,
}

/// A ring of cameras around the capture volume, all aimed at `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub radius_m: f64,
    pub height_m: f64,
    pub focal_px: f64,
    pub width: u32,
    pub height: u32,
    pub target: [f64; 3],
    /// The first `moving` cameras walk back and forth along the ring.
    pub moving: usize,
    pub orbit_amplitude_deg: f64,
    pub orbit_period_s: f64,
    /// Applied to moving cameras only.
    pub shake: Shake,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            radius_m: 4.0,
            height_m: 1.5,
            focal_px: 600.0,
            width: 640,
            height: 480,
            target: [0.0, 0.0, 1.0],
            moving: 0,
            orbit_amplitude_deg: 12.0,
            orbit_period_s: 15.0,
            shake: Shake::default(),
        }
    }
}

impl RigConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, SimError> {
        Ok(Intrinsics::centered(self.focal_px, self.width, self.height)?)
    }

    pub fn trajectories(&self, cameras: usize, seed: u64) -> Result<Vec<CameraTrajectory>, SimError> {
        if cameras < 2 || !(self.radius_m > 1.5) || !(self.orbit_period_s > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "rig of {cameras} cameras, radius {} m",
                self.radius_m
            )));
        }
        let intrinsics = self.intrinsics()?;
        Ok((0..cameras)
            .map(|c| {
                let mut rng = stream_rng(seed, Stream::Placement, c as u64, 0);
                let phases = [(); 7].map(|_| rng.gen_range(0.0..TAU));
                let moving = c < self.moving;
                CameraTrajectory {
                    intrinsics,
                    base_angle: TAU * c as f64 / cameras as f64,
                    radius_m: self.radius_m,
                    height_m: self.height_m,
                    target: Point3::from(self.target),
                    class: if moving {
                        MotionClass::Moving
                    } else {
                        MotionClass::Static
                    },
                    orbit_amplitude: self.orbit_amplitude_deg.to_radians(),
                    orbit_period_s: self.orbit_period_s,
                    shake: if moving { self.shake } else { Shake::default() },
                    phases,
                }
            })
            .collect())
    }
}

/// Pose curve of one device over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectory {
    pub intrinsics: Intrinsics,
    pub base_angle: f64,
    pub radius_m: f64,
    pub height_m: f64,
    pub target: Point3<f64>,
    pub class: MotionClass,
    pub orbit_amplitude: f64,
    pub orbit_period_s: f64,
    pub shake: Shake,
    phases: [f64; 7],
}

impl CameraTrajectory {
    pub fn center_at(&self, t: f64) -> Point3<f64> {
        let angle = match self.class {
            MotionClass::Static => self.base_angle,
            MotionClass::Moving => {
                self.base_angle + self.orbit_amplitude * (TAU * t / self.orbit_period_s + self.phases[0]).sin()
            }
        };
        let p = Point3::new(self.radius_m * angle.cos(), self.radius_m * angle.sin(), self.height_m);
        p + self.wobble(t, 1) * self.shake.position_m
    }

    fn wobble(&self, t: f64, first: usize) -> Vector3<f64> {
        let w = TAU * self.shake.frequency_hz * t;
        Vector3::new(
            (w + self.phases[first]).sin(),
            (1.3 * w + self.phases[first + 1]).sin(),
            (0.7 * w + self.phases[first + 2]).sin(),
        )
    }

    /// True world-to-camera pose at `t` seconds.
    pub fn pose_at(&self, t: f64) -> Pose {
        let pose =
            Pose::look_at(&self.center_at(t), &self.target, &Vector3::z()).expect("camera is off the target axis");
        if self.shake.rotation_deg == 0.0 {
            return pose;
        }
        pose.rotated_about_center(&(self.wobble(t, 4) * self.shake.rotation_deg.to_radians()))
    }

    pub fn camera_at(&self, t: f64) -> Camera {
        Camera::new(self.intrinsics, self.pose_at(t))
    }
}

/// Mean-reverting random walk of a device's pose error.
///
/// Each step the error decays by `reversion` and receives an innovation:
/// a rotation by an `N(0, σ_rot)` angle about a uniformly random axis and
/// an isotropic `N(0, σ_t)` translation. `reversion = 1` is a pure walk.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWalk {
    pub rotation_sigma_rad: f64,
    pub translation_sigma_m: f64,
    pub reversion: f64,
    pub omega: Vector3<f64>,
    pub offset: Vector3<f64>,
}

impl PoseWalk {
    pub fn new(rotation_sigma_deg: f64, translation_sigma_m: f64, reversion: f64) -> Self {
        Self {
            rotation_sigma_rad: rotation_sigma_deg.to_radians(),
            translation_sigma_m,
            reversion,
            omega: Vector3::zeros(),
            offset: Vector3::zeros(),
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let axis = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        let angle = rng.sample::<f64, _>(StandardNormal) * self.rotation_sigma_rad;
        let shift = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal)) * self.translation_sigma_m;
        let axis = axis.try_normalize(1e-12).unwrap_or_else(Vector3::x);
        self.omega = self.omega * self.reversion + axis * angle;
        self.offset = self.offset * self.reversion + shift;
    }

    /// Rotates the camera about its center by the current error, moves the
    /// center by the current offset, then re-orthonormalizes.
    pub fn apply(&self, pose: &Pose) -> Pose {
        if self.omega == Vector3::zeros() && self.offset == Vector3::zeros() {
            return *pose;
        }
        let rotation = pose.rotated_about_center(&self.omega).orthonormalized().rotation;
        let center = pose.center() + self.offset;
        Pose {
            rotation,
            translation: -(rotation * center.coords),
        }
    }
}

/// Pose reported by `device` at walk step `step`: the walk is replayed from
/// its seed, so the result only depends on its arguments.
pub fn noisy_pose(pose: &Pose, walk: &PoseWalk, seed: u64, device: usize, step: usize) -> Pose {
    let mut w = walk.clone();
    let mut rng = stream_rng(seed, Stream::PoseNoise, device as u64, 0);
    for _ in 0..=step {
        w.step(&mut rng);
    }
    w.apply(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn pose() -> Pose {
        Pose::look_at(&Point3::new(4.0, 0.0, 1.5), &Point3::new(0.0, 0.0, 1.0), &Vector3::z()).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let walk = PoseWalk::new(0.0, 0.0, 1.0);
        assert_eq!(noisy_pose(&pose(), &walk, 1, 0, 50), pose());
    }

    #[test]
    fn output_is_a_rotation() {
        let walk = PoseWalk::new(5.0, 0.05, 0.9);
        for step in [0, 10, 200] {
            let p = noisy_pose(&pose(), &walk, 3, 2, step);
            assert!(p.orthonormality_error() < 1e-9);
            assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn increments_have_the_configured_spread() {
        let mut walk = PoseWalk::new(1.0, 0.0, 1.0);
        let mut rng = stream_rng(9, Stream::PoseNoise, 0, 0);
        let base = pose();
        let mut prev = base;
        let mut sq = 0.0;
        for _ in 0..1000 {
            walk.step(&mut rng);
            let p = walk.apply(&base);
            let rel = Rotation3::from_matrix(&(p.rotation * prev.rotation.transpose()));
            sq += rel.angle().powi(2);
            prev = p;
        }
        let rms = (sq / 1000.0).sqrt().to_degrees();
        assert!((rms - 1.0).abs() < 0.1, "rms {rms}");
    }

    #[test]
    fn translation_offset_moves_the_center() {
        let mut walk = PoseWalk::new(0.0, 0.0, 1.0);
        walk.offset = Vector3::new(0.0, 0.1, 0.0);
        let p = walk.apply(&pose());
        assert!((p.center() - Point3::new(4.0, 0.1, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn moving_cameras_orbit_and_keep_the_target_in_view() {
        let rig = RigConfig {
            moving: 6,
            shake: Shake {
                position_m: 0.02,
                rotation_deg: 0.5,
                frequency_hz: 2.0,
            },
            ..RigConfig::default()
        };
        let traj = rig.trajectories(6, 4).unwrap();
        for tr in &traj {
            let a = tr.center_at(0.0);
            let travel = (0..60)
                .map(|k| (tr.center_at(k as f64 * 0.25) - a).norm())
                .fold(0.0, f64::max);
            assert!(travel > 0.5, "travel {travel}");
            for k in 0..50 {
                let cam = tr.camera_at(k as f64 * 0.3);
                let px = cam.project(&tr.target).unwrap();
                assert!(cam.intrinsics.contains(&px, 0.0));
                assert!((cam.pose.center().coords.xy().norm() - 4.0).abs() < 0.1);
            }
        }
        let still = RigConfig::default().trajectories(6, 4).unwrap();
        assert_eq!(still[0].pose_at(0.0), still[0].pose_at(7.0));
    }
}
