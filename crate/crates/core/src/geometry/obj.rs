//! Plain-text mesh and point-cloud formats.
//!
//! Meshes use the `v` / `f` subset of Wavefront OBJ with 1-based indices.
//! Faces with more than three corners are fan-triangulated; `vt`/`vn` suffixes
//! on face corners (`f 1/2/3 ...`) are accepted and ignored. Point clouds are
//! one `x y z` line per point.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GeometryError, PointCloud, TriMesh, Vec3};

pub fn read_obj(reader: impl Read) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(lineno, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let corners: Vec<usize> = parts
                    .map(|tok| {
                        let idx = tok.split('/').next().unwrap_or("");
                        let v: i64 = idx.parse().map_err(|_| parse_err(lineno, format!("bad face index {tok:?}")))?;
                        resolve_index(v, vertices.len()).ok_or_else(|| parse_err(lineno, format!("face index {v} out of range")))
                    })
                    .collect::<Result<_, _>>()?;
                if corners.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least three corners"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

fn resolve_index(v: i64, n: usize) -> Option<usize> {
    match v {
        v if v > 0 && (v as usize) <= n => Some(v as usize - 1),
        v if v < 0 && (v.unsigned_abs() as usize) <= n => Some(n - v.unsigned_abs() as usize),
        _ => None,
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, message: message.into() }
}

pub fn write_obj(mesh: &TriMesh, mut w: impl Write) -> Result<(), GeometryError> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh, GeometryError> {
    read_obj(File::open(path)?)
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_points(reader: impl Read) -> Result<PointCloud, GeometryError> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let coords: Vec<f64> = trimmed
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(i + 1, format!("bad coordinate: {e}")))?;
        if coords.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 coordinates, found {}", coords.len())));
        }
        points.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    PointCloud::new(points)
}

pub fn write_points(cloud: &PointCloud, mut w: impl Write) -> Result<(), GeometryError> {
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}
