use std::f64::consts::{PI, TAU};

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Skeleton3D;

/// BODY_25 joint order.
pub const BODY25_NAMES: [&str; 25] = [
    "Nose",
    "Neck",
    "RShoulder",
    "RElbow",
    "RWrist",
    "LShoulder",
    "LElbow",
    "LWrist",
    "MidHip",
    "RHip",
    "RKnee",
    "RAnkle",
    "LHip",
    "LKnee",
    "LAnkle",
    "REye",
    "LEye",
    "REar",
    "LEar",
    "LBigToe",
    "LSmallToe",
    "LHeel",
    "RBigToe",
    "RSmallToe",
    "RHeel",
];
pub const HIP_JOINT: usize = 8;
pub const ROOT_HEIGHT: f64 = 0.95;

const PARENTS: [Option<usize>; 25] = [
    Some(1),
    Some(8),
    Some(1),
    Some(2),
    Some(3),
    Some(1),
    Some(5),
    Some(6),
    None,
    Some(8),
    Some(9),
    Some(10),
    Some(8),
    Some(12),
    Some(13),
    Some(0),
    Some(0),
    Some(15),
    Some(16),
    Some(14),
    Some(14),
    Some(14),
    Some(11),
    Some(11),
    Some(11),
];

/// Rest offsets from the parent joint; +x right, +y forward, +z up.
const OFFSETS: [[f64; 3]; 25] = [
    [0.0, 0.08, 0.20],
    [0.0, 0.0, 0.50],
    [0.18, 0.0, 0.0],
    [0.0, 0.0, -0.28],
    [0.0, 0.0, -0.25],
    [-0.18, 0.0, 0.0],
    [0.0, 0.0, -0.28],
    [0.0, 0.0, -0.25],
    [0.0, 0.0, 0.0],
    [0.10, 0.0, 0.0],
    [0.0, 0.0, -0.42],
    [0.0, 0.0, -0.40],
    [-0.10, 0.0, 0.0],
    [0.0, 0.0, -0.42],
    [0.0, 0.0, -0.40],
    [0.035, 0.02, 0.04],
    [-0.035, 0.02, 0.04],
    [0.05, -0.06, 0.0],
    [-0.05, -0.06, 0.0],
    [-0.02, 0.16, -0.06],
    [-0.06, 0.14, -0.06],
    [0.0, -0.05, -0.07],
    [0.02, 0.16, -0.06],
    [0.06, 0.14, -0.06],
    [0.0, -0.05, -0.07],
];

/// Radius of the capsule from each joint's parent to the joint.
const RADII: [f64; 25] = [
    0.07, 0.14, 0.06, 0.05, 0.04, 0.06, 0.05, 0.04, 0.0, 0.08, 0.07, 0.05, 0.08, 0.07, 0.05, 0.06, 0.06, 0.05, 0.05,
    0.035, 0.035, 0.035, 0.035, 0.035, 0.035,
];

/// `bias + amplitude·sin(2π·harmonic·t/period + phase)` radians about `axis`
/// (in the parent-rotated frame) applied at `joint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTerm {
    pub joint: usize,
    pub axis: [f64; 3],
    pub bias: f64,
    pub amplitude: f64,
    pub harmonic: u32,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub period_s: f64,
    /// Radius of the circle the root walks along; 0 keeps it in place.
    pub walk_radius: f64,
    pub root_height: f64,
    pub bob: f64,
    pub terms: Vec<JointTerm>,
}

impl MotionScript {
    /// Standing still in the rest pose.
    pub fn rest() -> Self {
        Self {
            period_s: 4.0,
            walk_radius: 0.0,
            root_height: ROOT_HEIGHT,
            bob: 0.0,
            terms: Vec::new(),
        }
    }

    /// Slow walk on a small circle with swinging limbs.
    pub fn walk(period_s: f64, walk_radius: f64, scale: f64) -> Self {
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let term = |joint, axis, bias, amplitude, phase| JointTerm {
            joint,
            axis,
            bias,
            amplitude: amplitude * scale,
            harmonic: 1,
            phase,
        };
        Self {
            period_s,
            walk_radius,
            root_height: ROOT_HEIGHT,
            bob: 0.02 * scale,
            terms: vec![
                term(2, x, 0.0, 0.5, 0.0),
                term(2, y, -0.15, 0.0, 0.0),
                term(5, x, 0.0, 0.5, PI),
                term(5, y, 0.15, 0.0, 0.0),
                term(3, x, 0.3, 0.25, 0.5),
                term(6, x, 0.3, 0.25, 0.5 + PI),
                term(9, x, 0.0, 0.4, PI),
                term(12, x, 0.0, 0.4, 0.0),
                term(10, x, -0.3, 0.3, PI + 0.8),
                term(13, x, -0.3, 0.3, 0.8),
                term(1, [0.0, 0.0, 1.0], 0.0, 0.1, 0.0),
            ],
        }
    }

    fn angle(&self, term: &JointTerm, t: f64) -> f64 {
        term.bias + term.amplitude * (TAU * f64::from(term.harmonic) * t / self.period_s + term.phase).sin()
    }

    fn root(&self, t: f64) -> (Point3<f64>, Rotation3<f64>) {
        let w = TAU * t / self.period_s;
        let z = self.root_height + self.bob * (2.0 * w).sin();
        if self.walk_radius == 0.0 {
            return (Point3::new(0.0, 0.0, z), Rotation3::identity());
        }
        let p = Point3::new(self.walk_radius * w.cos(), self.walk_radius * w.sin(), z);
        // face along the direction of travel
        (p, Rotation3::from_axis_angle(&Vector3::z_axis(), w))
    }
}

/// A bone swept by a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.a + ab * s)).norm()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.distance(p) <= self.radius
    }
}

/// Kinematic tree, rest offsets, capsule radii and motion script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorModel {
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vector3<f64>>,
    pub radii: Vec<f64>,
    pub script: MotionScript,
}

impl ActorModel {
    pub fn body25(script: MotionScript) -> Self {
        Self {
            parents: PARENTS.to_vec(),
            offsets: OFFSETS.iter().map(|o| Vector3::from(*o)).collect(),
            radii: RADII.to_vec(),
            script,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        self.offsets[joint].norm()
    }

    /// Parents before children.
    fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.parents.len()).filter(|j| self.parents[*j].is_none()).collect();
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            order.extend((0..self.parents.len()).filter(|j| self.parents[*j] == Some(p)));
            i += 1;
        }
        order
    }

    fn local_rotation(&self, joint: usize, t: f64) -> Rotation3<f64> {
        self.script
            .terms
            .iter()
            .filter(|term| term.joint == joint)
            .fold(Rotation3::identity(), |acc, term| {
                let axis = Unit::new_normalize(Vector3::from(term.axis));
                acc * Rotation3::from_axis_angle(&axis, self.script.angle(term, t))
            })
    }

    /// World joint positions at `t` seconds.
    pub fn joints_at(&self, t: f64) -> Vec<Point3<f64>> {
        let n = self.joint_count();
        let mut pos = vec![Point3::origin(); n];
        let mut rot = vec![Rotation3::identity(); n];
        let (root_p, root_r) = self.script.root(t);
        for j in self.order() {
            match self.parents[j] {
                None => {
                    pos[j] = root_p;
                    rot[j] = root_r * self.local_rotation(j, t);
                }
                Some(p) => {
                    pos[j] = pos[p] + rot[p] * self.offsets[j];
                    rot[j] = rot[p] * self.local_rotation(j, t);
                }
            }
        }
        pos
    }

    pub fn capsules_at(&self, t: f64) -> Vec<Capsule> {
        let joints = self.joints_at(t);
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(j, p)| {
                p.map(|p| Capsule {
                    a: joints[p],
                    b: joints[j],
                    radius: self.radii[j],
                })
            })
            .collect()
    }
}

/// Ground-truth skeleton of the actor at `t` seconds.
pub fn actor_pose_at(t: f64, actor: &ActorModel, frame: u32) -> Skeleton3D {
    Skeleton3D::new(frame, actor.joints_at(t).into_iter().map(Some).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_is_the_offset_chain() {
        let actor = ActorModel::body25(MotionScript::rest());
        let j = actor.joints_at(0.0);
        assert_eq!(j[HIP_JOINT], Point3::new(0.0, 0.0, ROOT_HEIGHT));
        assert!((j[1] - Point3::new(0.0, 0.0, 1.45)).norm() < 1e-15);
        assert!((j[4] - Point3::new(0.18, 0.0, 1.45 - 0.53)).norm() < 1e-12);
        assert!((j[11] - Point3::new(0.10, 0.0, 0.13)).norm() < 1e-12);
    }

    #[test]
    fn tree_is_rooted_at_the_hip() {
        let actor = ActorModel::body25(MotionScript::rest());
        assert_eq!(actor.order().len(), 25);
        assert_eq!(actor.order()[0], HIP_JOINT);
        assert_eq!(actor.capsules_at(0.0).len(), 24);
    }

    #[test]
    fn bones_are_rigid() {
        let actor = ActorModel::body25(MotionScript::walk(4.0, 0.3, 1.0));
        for k in 0..200 {
            let t = k as f64 * 0.0371;
            let j = actor.joints_at(t);
            for (c, p) in actor.parents.iter().enumerate() {
                if let Some(p) = p {
                    let d = (j[c] - j[*p]).norm();
                    assert!((d - actor.bone_length(c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn motion_is_periodic() {
        let actor = ActorModel::body25(MotionScript::walk(4.0, 0.3, 1.0));
        for t in [0.0, 0.7, 2.9] {
            let (a, b) = (actor.joints_at(t), actor.joints_at(t + 4.0));
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn actor_stays_within_the_default_volume() {
        let actor = ActorModel::body25(MotionScript::walk(4.0, 0.3, 1.0));
        for k in 0..100 {
            let t = k as f64 * 0.04;
            let hip = actor.joints_at(t)[HIP_JOINT];
            for c in actor.capsules_at(t) {
                for p in [c.a, c.b] {
                    let d = p - hip;
                    assert!(d.x.abs() + c.radius < 0.9 && d.y.abs() + c.radius < 0.9);
                    assert!(d.z.abs() + c.radius < 0.95);
                }
            }
        }
    }
}
