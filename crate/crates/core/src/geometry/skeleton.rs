use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Joint count of the BODY_25 layout.
pub const DEFAULT_JOINT_COUNT: usize = 25;

/// Score denominator floor, in pixels, for candidates centered on the frame.
pub const CENTER_DISTANCE_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint2D {
    pub position: Point2<f64>,
    pub confidence: f64,
}

impl Joint2D {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            confidence,
        }
    }
}

/// Ordered 2D joints of one detected person in one camera frame.
///
/// `None` entries are MISSING joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton2D {
    pub frame: u32,
    pub camera: usize,
    pub joints: Vec<Option<Joint2D>>,
}

impl Skeleton2D {
    pub fn new(frame: u32, camera: usize, joints: Vec<Option<Joint2D>>) -> Self {
        Self { frame, camera, joints }
    }

    /// A detection where every joint is MISSING.
    pub fn missing(frame: u32, camera: usize, joint_count: usize) -> Self {
        Self::new(frame, camera, vec![None; joint_count])
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Joint `m` if present with confidence at least `min_confidence`.
    pub fn usable(&self, m: usize, min_confidence: f64) -> Option<Point2<f64>> {
        match self.joints.get(m).copied().flatten() {
            Some(j) if j.confidence >= min_confidence && j.position.x.is_finite() && j.position.y.is_finite() => {
                Some(j.position)
            }
            _ => None,
        }
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }

    /// Axis-aligned box around the present joints.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.joints.iter().flatten();
        let first = it.next()?;
        let mut bb = BoundingBox {
            min: first.position,
            max: first.position,
        };
        for j in it {
            bb.min.x = bb.min.x.min(j.position.x);
            bb.min.y = bb.min.y.min(j.position.y);
            bb.max.x = bb.max.x.max(j.position.x);
            bb.max.y = bb.max.y.max(j.position.y);
        }
        Some(bb)
    }

    /// True when all present joints lie within the image extended by `margin` pixels.
    pub fn within_bounds(&self, width: f64, height: f64, margin: f64) -> bool {
        self.joints.iter().flatten().all(|j| {
            j.position.x >= -margin
                && j.position.y >= -margin
                && j.position.x <= width + margin
                && j.position.y <= height + margin
        })
    }
}

/// Ordered 3D joints in world coordinates; `None` is UNRESOLVED.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub frame: u32,
    pub joints: Vec<Option<Point3<f64>>>,
}

impl Skeleton3D {
    pub fn new(frame: u32, joints: Vec<Option<Point3<f64>>>) -> Self {
        Self { frame, joints }
    }

    pub fn unresolved(frame: u32, joint_count: usize) -> Self {
        Self::new(frame, vec![None; joint_count])
    }

    pub fn resolved_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x).max(0.0) * (self.max.y - self.min.y).max(0.0)
    }

    pub fn center(&self) -> Point2<f64> {
        nalgebra::center(&self.min, &self.max)
    }
}

/// A person candidate produced by a 2D detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub skeleton: Skeleton2D,
    pub bbox: BoundingBox,
}

impl Detection {
    /// Uses the joints' bounding box; `None` if no joint is present.
    pub fn from_skeleton(skeleton: Skeleton2D) -> Option<Self> {
        let bbox = skeleton.bounding_box()?;
        Some(Self { skeleton, bbox })
    }
}

/// Bounding-box area over distance from the frame center (floored at
/// [`CENTER_DISTANCE_FLOOR`]).
pub fn subject_score(bbox: &BoundingBox, width: f64, height: f64) -> f64 {
    let frame_center = Point2::new(width / 2.0, height / 2.0);
    let dist = nalgebra::distance(&bbox.center(), &frame_center);
    bbox.area() / dist.max(CENTER_DISTANCE_FLOOR)
}

/// Index of the highest-scoring candidate; ties go to the lowest index.
pub fn select_subject_index(detections: &[Detection], width: f64, height: f64) -> Result<usize, GeometryError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in detections.iter().enumerate() {
        let s = subject_score(&d.bbox, width, height);
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i).ok_or(GeometryError::NoDetections)
}

/// Picks the actor among detected candidates in one frame.
pub fn select_subject<'a>(
    detections: &'a [Detection],
    width: f64,
    height: f64,
) -> Result<&'a Skeleton2D, GeometryError> {
    select_subject_index(detections, width, height).map(|i| &detections[i].skeleton)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxed(cx: f64, cy: f64, half: f64) -> Detection {
        Detection {
            skeleton: Skeleton2D::missing(0, 0, DEFAULT_JOINT_COUNT),
            bbox: BoundingBox {
                min: Point2::new(cx - half, cy - half),
                max: Point2::new(cx + half, cy + half),
            },
        }
    }

    #[test]
    fn singleton_is_selected() {
        let d = vec![boxed(10.0, 10.0, 5.0)];
        assert_eq!(select_subject_index(&d, 640.0, 480.0).unwrap(), 0);
    }

    #[test]
    fn centered_beats_corner_of_equal_area() {
        let d = vec![boxed(20.0, 20.0, 10.0), boxed(320.0, 240.0, 10.0)];
        assert_eq!(select_subject_index(&d, 640.0, 480.0).unwrap(), 1);
    }

    #[test]
    fn exact_center_uses_distance_floor() {
        // centered 2x2 box: score = 4 / max(0, 1) = 4
        // large off-center box: 100x100 at distance 300 → 10000/300 ≈ 33.3
        let centered = boxed(320.0, 240.0, 1.0);
        let big = boxed(20.0, 240.0, 50.0);
        assert_eq!(subject_score(&centered.bbox, 640.0, 480.0), 4.0);
        let s_big = subject_score(&big.bbox, 640.0, 480.0);
        assert!((s_big - 10000.0 / 300.0).abs() < 1e-9);
        let d = vec![big.clone(), centered.clone()];
        assert_eq!(select_subject_index(&d, 640.0, 480.0).unwrap(), 0);
        // with a smaller competitor the centered box wins without dividing by zero
        let small = boxed(20.0, 240.0, 5.0);
        let d = vec![small, centered];
        assert_eq!(select_subject_index(&d, 640.0, 480.0).unwrap(), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let d = vec![boxed(100.0, 240.0, 10.0), boxed(540.0, 240.0, 10.0)];
        assert_eq!(select_subject_index(&d, 640.0, 480.0).unwrap(), 0);
    }

    #[test]
    fn empty_list_is_a_miss() {
        assert!(matches!(
            select_subject_index(&[], 640.0, 480.0),
            Err(GeometryError::NoDetections)
        ));
    }

    #[test]
    fn bounding_box_of_joints() {
        let s = Skeleton2D::new(
            0,
            0,
            vec![
                Some(Joint2D::new(1.0, 5.0, 1.0)),
                None,
                Some(Joint2D::new(4.0, 2.0, 1.0)),
            ],
        );
        let bb = s.bounding_box().unwrap();
        assert_eq!(bb.area(), 9.0);
        assert!(Skeleton2D::missing(0, 0, 3).bounding_box().is_none());
    }

    #[test]
    fn low_confidence_counts_as_missing() {
        let s = Skeleton2D::new(0, 0, vec![Some(Joint2D::new(1.0, 1.0, 0.05))]);
        assert!(s.usable(0, 0.1).is_none());
        assert!(s.usable(0, 0.0).is_some());
    }

    proptest! {
        #[test]
        fn selection_is_scale_invariant(
            boxes in prop::collection::vec((2.0f64..600.0, 2.0f64..440.0, 1.0f64..40.0), 1..8),
            scale in 1.0f64..10.0,
        ) {
            // the distance floor is in pixels, so only upscaling leaves every
            // floored score in the same proportion; keep boxes off-center
            let dets: Vec<Detection> = boxes.iter().map(|&(x, y, h)| boxed(x, y, h)).collect();
            prop_assume!(dets.iter().all(|d| nalgebra::distance(&d.bbox.center(), &Point2::new(320.0, 240.0)) >= 1.0));
            let scaled: Vec<Detection> = boxes.iter().map(|&(x, y, h)| boxed(x * scale, y * scale, h * scale)).collect();
            let a = select_subject_index(&dets, 640.0, 480.0).unwrap();
            let b = select_subject_index(&scaled, 640.0 * scale, 480.0 * scale).unwrap();
            // scores scale by the same factor, so the argmax is preserved
            // unless two scores tie up to rounding
            let sa: Vec<f64> = dets.iter().map(|d| subject_score(&d.bbox, 640.0, 480.0)).collect();
            let near_tie = sa.iter().enumerate().any(|(i, s)| i != a && (s - sa[a]).abs() <= 1e-9 * sa[a]);
            prop_assume!(!near_tie);
            prop_assert_eq!(a, b);
        }
    }
}
