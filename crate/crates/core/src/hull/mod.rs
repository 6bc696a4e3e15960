//! Shape from silhouette: voxel carving and surface extraction.

mod export;
mod grid;
mod mask;
mod mesh;
mod sphere;
mod tables;

use thiserror::Error;

pub use export::{export_mesh, read_ply, write_obj, write_ply, MeshFormat};
pub use grid::{build_grid, carve, carve_conservative, Silhouette, VoxelGrid, DEFAULT_DIMS, DEFAULT_EXTENT};
pub use mask::Mask;
pub use mesh::{marching_cubes, marching_cubes_unpadded, SurfaceMesh, MIN_TRIANGLE_AREA};
pub use sphere::{sphere_mask, SphereScene};

#[derive(Debug, Error)]
pub enum HullError {
    #[error("bad grid: extent {extent:?} with {dims:?} voxels")]
    BadDims { extent: [f64; 3], dims: [usize; 3] },
    #[error("no silhouettes to carve with")]
    NoSilhouettes,
    #[error("cannot require {required} of {cameras} cameras")]
    BadThreshold { required: usize, cameras: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("mesh parse error: {0}")]
    Parse(String),
}
