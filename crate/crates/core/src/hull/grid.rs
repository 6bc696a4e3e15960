use nalgebra::{Matrix3x4, Point3, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HullError, Mask};
use crate::geometry::{Camera, DEPTH_EPSILON};

/// Default capture volume around the hip, meters.
pub const DEFAULT_EXTENT: [f64; 3] = [1.8, 1.8, 1.9];
pub const DEFAULT_DIMS: [usize; 3] = [160, 160, 160];

/// Axis-aligned voxel grid with per-voxel camera support counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub origin: Point3<f64>,
    pub dims: [usize; 3],
    /// Edge length per axis.
    pub voxel: Vector3<f64>,
    pub support: Vec<u8>,
    pub occupancy: Vec<bool>,
}

/// A grid of `dims` voxels spanning `extent`, centered on `hip`.
pub fn build_grid(hip: &Point3<f64>, extent: [f64; 3], dims: [usize; 3]) -> Result<VoxelGrid, HullError> {
    if dims.iter().any(|d| *d == 0) || extent.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(HullError::BadDims { extent, dims });
    }
    if !hip.coords.iter().all(|v| v.is_finite()) {
        return Err(HullError::BadDims { extent, dims });
    }
    let n = dims[0] * dims[1] * dims[2];
    let ext = Vector3::from(extent);
    Ok(VoxelGrid {
        origin: hip - ext / 2.0,
        dims,
        voxel: ext.component_div(&Vector3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64)),
        support: vec![0; n],
        occupancy: vec![false; n],
    })
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin
            + Vector3::new(
                (i as f64 + 0.5) * self.voxel.x,
                (j as f64 + 0.5) * self.voxel.y,
                (k as f64 + 0.5) * self.voxel.z,
            )
    }

    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel.x * self.voxel.y * self.voxel.z
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    pub fn occupied_volume(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_volume()
    }

    /// Re-thresholds the stored support counts.
    pub fn with_threshold(&self, n_required: usize) -> Self {
        let mut g = self.clone();
        for (o, s) in g.occupancy.iter_mut().zip(&g.support) {
            *o = usize::from(*s) >= n_required;
        }
        g
    }
}

/// A camera and its binary silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub camera: Camera,
    pub mask: Mask,
}

struct Projector<'a> {
    p: Matrix3x4<f64>,
    mask: &'a Mask,
}

impl Projector<'_> {
    /// The floor of the projection lands on a set pixel; points on or behind
    /// the camera plane and outside the frame are not in the cone.
    fn sees(&self, point: &Point3<f64>) -> bool {
        let x = self.p * Vector4::new(point.x, point.y, point.z, 1.0);
        if x.z <= DEPTH_EPSILON {
            return false;
        }
        self.mask.contains(x.x / x.z, x.y / x.z)
    }
}

fn check_inputs(silhouettes: &[Silhouette], n_required: usize) -> Result<(), HullError> {
    if silhouettes.is_empty() {
        return Err(HullError::NoSilhouettes);
    }
    if n_required > silhouettes.len() || silhouettes.len() > usize::from(u8::MAX) {
        return Err(HullError::BadThreshold {
            required: n_required,
            cameras: silhouettes.len(),
        });
    }
    Ok(())
}

fn count_support(grid: &VoxelGrid, n_required: usize, supported: impl Fn(&Point3<f64>) -> u8 + Sync) -> VoxelGrid {
    let [nx, ny, _] = grid.dims;
    let mut out = grid.clone();
    out.support.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                slab[i + nx * j] = supported(&grid.center(i, j, k));
            }
        }
    });
    for (o, s) in out.occupancy.iter_mut().zip(&out.support) {
        *o = usize::from(*s) >= n_required;
    }
    out
}

/// Counts, for every voxel center, the cameras whose silhouette contains its
/// projection, and marks voxels with at least `n_required` as occupied.
pub fn carve(grid: &VoxelGrid, silhouettes: &[Silhouette], n_required: usize) -> Result<VoxelGrid, HullError> {
    check_inputs(silhouettes, n_required)?;
    let projectors: Vec<Projector> = silhouettes
        .iter()
        .map(|s| Projector {
            p: s.camera.projection_matrix(),
            mask: &s.mask,
        })
        .collect();
    Ok(count_support(grid, n_required, |c| {
        projectors.iter().filter(|p| p.sees(c)).count() as u8
    }))
}

struct BallProjector<'a> {
    camera: &'a Camera,
    field: Vec<f64>,
    width: usize,
    height: usize,
}

impl BallProjector<'_> {
    /// Whether the projection of the ball of radius `r` around `center` may
    /// touch a set pixel. Errs on the side of yes.
    fn touches(&self, center: &Point3<f64>, r: f64) -> bool {
        let q = self.camera.pose.transform_point(center);
        if q.z - r <= DEPTH_EPSILON {
            return true;
        }
        let k = &self.camera.intrinsics;
        let (x, y) = (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        // |Δ(x/z)| ≤ r (z + |q_xy|) / (z (z − r)) for any point of the ball
        let reach = k.fx.max(k.fy) * r * (1.0 + q.x.hypot(q.y) / q.z) / (q.z - r);
        let u = x.clamp(0.0, self.width as f64 - 1.0).floor();
        let v = y.clamp(0.0, self.height as f64 - 1.0).floor();
        let offset = (x - u - 0.5).hypot(y - v - 0.5);
        self.field[v as usize * self.width + u as usize] <= reach + offset + std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Like [`carve`], but a camera supports a voxel when its silhouette touches
/// the projection of the ball of radius `margin` around the voxel center.
/// With `margin` at least a voxel diagonal, every point that projects inside
/// all silhouettes ends up strictly inside the marching-cubes surface.
pub fn carve_conservative(
    grid: &VoxelGrid,
    silhouettes: &[Silhouette],
    n_required: usize,
    margin: f64,
) -> Result<VoxelGrid, HullError> {
    check_inputs(silhouettes, n_required)?;
    let projectors: Vec<BallProjector> = silhouettes
        .iter()
        .map(|s| BallProjector {
            camera: &s.camera,
            field: s.mask.distance_field(),
            width: s.mask.width() as usize,
            height: s.mask.height() as usize,
        })
        .collect();
    if projectors.iter().any(|p| p.width == 0 || p.height == 0) {
        return Err(HullError::NoSilhouettes);
    }
    Ok(count_support(grid, n_required, |c| {
        projectors.iter().filter(|p| p.touches(c, margin)).count() as u8
    }))
}
