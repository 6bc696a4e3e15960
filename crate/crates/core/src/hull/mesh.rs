use std::collections::{HashMap, HashSet};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::VoxelGrid;

/// Triangles with area below this are not emitted.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Unit, area-weighted vertex normals pointing out of the solid.
    pub normals: Vec<Vector3<f64>>,
}

impl SurfaceMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn corners(&self, t: &[u32; 3]) -> [Point3<f64>; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.coords.dot(&b.coords.cross(&c.coords))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                (b - a).cross(&(c - a)).norm() / 2.0
            })
            .sum()
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        uses.values().all(|n| *n == 2)
    }

    /// Point-in-solid by ray parity. The ray direction is fixed and skewed
    /// so it does not run along grid-aligned edges or faces.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let dir = Vector3::new(0.5773, 0.6123, 0.5403).normalize();
        let mut crossings = 0usize;
        for t in &self.triangles {
            let [a, b, c] = self.corners(t);
            let (e1, e2) = (b - a, c - a);
            let h = dir.cross(&e2);
            let det = e1.dot(&h);
            if det.abs() < 1e-15 {
                continue;
            }
            let s = p - a;
            let u = s.dot(&h) / det;
            if !(0.0..=1.0).contains(&u) {
                continue;
            }
            let q = s.cross(&e1);
            let v = dir.dot(&q) / det;
            if v < 0.0 || u + v > 1.0 {
                continue;
            }
            if e2.dot(&q) / det > 0.0 {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }

    pub fn compute_normals(&mut self) {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = self.corners(t);
            let n = (b - a).cross(&(c - a));
            for i in t {
                acc[*i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vector3::zeros))
            .collect();
    }
}

/// Marching cubes over the occupancy field at iso-level 0.5, with vertices
/// at edge midpoints. The grid is padded with one empty layer so surfaces
/// touching the boundary still close.
pub fn marching_cubes(grid: &VoxelGrid) -> SurfaceMesh {
    extract(grid, true)
}

/// As [`marching_cubes`], but only over cells fully inside the grid; the
/// result is open where the solid meets the grid boundary.
pub fn marching_cubes_unpadded(grid: &VoxelGrid) -> SurfaceMesh {
    extract(grid, false)
}

fn extract(grid: &VoxelGrid, pad: bool) -> SurfaceMesh {
    let [nx, ny, nz] = grid.dims;
    // lattice point g maps to voxel g − p
    let p = usize::from(pad);
    let (lx, ly, lz) = (nx + 2 * p, ny + 2 * p, nz + 2 * p);
    let filled = |g: [usize; 3]| -> bool {
        let [i, j, k] = g.map(|v| v.wrapping_sub(p));
        i < nx && j < ny && k < nz && grid.is_occupied(i, j, k)
    };
    let edge_key = |a: [usize; 3], b: [usize; 3]| -> u64 {
        let lo = if a <= b { a } else { b };
        let axis = (0..3).find(|d| a[*d] != b[*d]).expect("distinct corners");
        ((((lo[2] * ly) + lo[1]) * lx + lo[0]) * 3 + axis) as u64
    };

    let slabs: Vec<Vec<[u64; 3]>> = (0..lz.saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ly.saturating_sub(1) {
                for i in 0..lx.saturating_sub(1) {
                    let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                    let case = (0..8)
                        .filter(|c| !filled(corner(*c)))
                        .fold(0usize, |acc, c| acc | (1 << c));
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    for t in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        let key = |e: i8| {
                            let [a, b] = EDGES[e as usize];
                            edge_key(corner(a), corner(b))
                        };
                        // empty corners count as "below", so the table winding faces outward
                        tris.push([key(t[0]), key(t[1]), key(t[2])]);
                    }
                }
            }
            tris
        })
        .collect();

    let position = |key: u64| -> Point3<f64> {
        let axis = (key % 3) as usize;
        let mut rest = key / 3;
        let gx = (rest % lx as u64) as f64;
        rest /= lx as u64;
        let gy = (rest % ly as u64) as f64;
        let gz = (rest / ly as u64) as f64;
        let mut g = Vector3::new(gx, gy, gz);
        g[axis] += 0.5;
        let offset = 0.5 - p as f64;
        grid.origin + (g.add_scalar(offset)).component_mul(&grid.voxel)
    };

    let mut mesh = SurfaceMesh::default();
    let mut index: HashMap<u64, u32> = HashMap::new();
    for tri in slabs.into_iter().flatten() {
        let corners = tri.map(position);
        let area = (corners[1] - corners[0]).cross(&(corners[2] - corners[0])).norm() / 2.0;
        if area < MIN_TRIANGLE_AREA {
            continue;
        }
        let ids = tri.map(|key| {
            *index.entry(key).or_insert_with(|| {
                mesh.vertices.push(position(key));
                (mesh.vertices.len() - 1) as u32
            })
        });
        mesh.triangles.push(ids);
    }
    mesh.compute_normals();
    mesh
}
