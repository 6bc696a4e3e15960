//! Carves the visual hull of a sphere seen by a ring of six cameras,
//! meshes it with marching cubes and writes the surface as PLY.
//!
//! `cargo run --release --example visual_hull_sphere [dims] [out.ply]`

use std::path::PathBuf;

use syncap::hull::{build_grid, carve, export_mesh, marching_cubes, MeshFormat, SphereScene, DEFAULT_EXTENT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dims: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(160);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sphere-hull.ply"));

    let scene = SphereScene::standard();
    let silhouettes = scene.silhouettes();
    let grid = build_grid(&scene.center, DEFAULT_EXTENT, [dims; 3])?;
    let support = carve(&grid, &silhouettes, 0)?;
    println!("sphere volume {:.5} m^3", scene.volume());
    for n in (silhouettes.len() - 2)..=silhouettes.len() {
        let hull = support.with_threshold(n);
        println!(
            "n = {n}: {:>8} voxels, {:.5} m^3 ({:.3}x)",
            hull.occupied_count(),
            hull.occupied_volume(),
            hull.occupied_volume() / scene.volume()
        );
    }
    let hull = support.with_threshold(silhouettes.len());
    let mesh = marching_cubes(&hull);
    println!(
        "mesh: {} vertices, {} triangles, volume {:.5} m^3, closed {}, euler {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.volume(),
        mesh.is_closed(),
        mesh.euler_characteristic()
    );
    export_mesh(&mesh, &out, MeshFormat::Ply)?;
    println!("wrote {}", out.display());
    Ok(())
}
