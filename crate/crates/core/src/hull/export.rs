use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{HullError, SurfaceMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl FromStr for MeshFormat {
    type Err = HullError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            other => Err(HullError::Parse(format!("unknown mesh format {other:?}"))),
        }
    }
}

/// Wavefront OBJ with per-vertex normals and 1-based faces.
pub fn write_obj<W: Write>(mesh: &SurfaceMesh, mut w: W) -> Result<(), HullError> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for n in &mesh.normals {
        writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
    }
    Ok(())
}

/// ASCII PLY with double-precision positions and normals.
pub fn write_ply<W: Write>(mesh: &SurfaceMesh, mut w: W) -> Result<(), HullError> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property double {p}")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        let n = mesh.normals.get(i).copied().unwrap_or_else(Vector3::zeros);
        writeln!(w, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z)?;
    }
    for [a, b, c] in &mesh.triangles {
        writeln!(w, "3 {a} {b} {c}")?;
    }
    Ok(())
}

pub fn export_mesh(mesh: &SurfaceMesh, path: &Path, format: MeshFormat) -> Result<(), HullError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        MeshFormat::Obj => write_obj(mesh, &mut w)?,
        MeshFormat::Ply => write_ply(mesh, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn parse<T: FromStr>(token: Option<&str>, what: &str) -> Result<T, HullError> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| HullError::Parse(format!("bad {what}")))
}

/// Reads back the ASCII PLY layout written by [`write_ply`].
pub fn read_ply<R: BufRead>(r: R) -> Result<SurfaceMesh, HullError> {
    let mut lines = r.lines();
    let mut next = || -> Result<String, HullError> {
        lines
            .next()
            .ok_or_else(|| HullError::Parse("unexpected end of file".into()))?
            .map_err(HullError::from)
    };
    if next()?.trim() != "ply" || next()?.trim() != "format ascii 1.0" {
        return Err(HullError::Parse("not an ASCII PLY file".into()));
    }
    let (mut vertices, mut faces) = (None, None);
    loop {
        let line = next()?;
        let mut tok = line.split_whitespace();
        match (tok.next(), tok.next()) {
            (Some("end_header"), _) => break,
            (Some("element"), Some("vertex")) => vertices = Some(parse::<usize>(tok.next(), "vertex count")?),
            (Some("element"), Some("face")) => faces = Some(parse::<usize>(tok.next(), "face count")?),
            _ => {}
        }
    }
    let (nv, nf) = vertices
        .zip(faces)
        .ok_or_else(|| HullError::Parse("missing element counts".into()))?;
    let mut mesh = SurfaceMesh::default();
    for _ in 0..nv {
        let line = next()?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| HullError::Parse(format!("bad vertex {line:?}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 6 {
            return Err(HullError::Parse(format!("bad vertex {line:?}")));
        }
        mesh.vertices.push(Point3::new(v[0], v[1], v[2]));
        mesh.normals.push(Vector3::new(v[3], v[4], v[5]));
    }
    for _ in 0..nf {
        let line = next()?;
        let mut tok = line.split_whitespace();
        if parse::<u8>(tok.next(), "face arity")? != 3 {
            return Err(HullError::Parse(format!("non-triangle face {line:?}")));
        }
        let t = [(); 3].map(|_| parse::<u32>(tok.next(), "face index"));
        let [a, b, c] = t;
        let t = [a?, b?, c?];
        if t.iter().any(|i| *i as usize >= nv) {
            return Err(HullError::Parse(format!("face index out of range {line:?}")));
        }
        mesh.triangles.push(t);
    }
    Ok(mesh)
}
