//! 3D math: rigid transforms, (dual) quaternions, meshes, point clouds,
//! surface sampling, exact nearest-neighbour search and Chamfer distances.

mod kdtree;
mod mesh;
pub mod obj;
pub mod shapes;
mod quat;
mod transform;
mod vec3;

use thiserror::Error;

pub use kdtree::NnIndex;
pub use mesh::{centroid, sample_surface, sample_surface_with_faces, PointCloud, Recenter, TriMesh};
pub use quat::{wrap_axis_angle, Quat, UnitQuat};
pub use transform::{apply_points, compose, relative, DualQuat, RigidTransform};
pub use vec3::Vec3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh has zero surface area")]
    DegenerateMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean distance from each `src` point to its nearest `dst` point.
///
/// One-sided: `chamfer_one_sided(a, b)` and `chamfer_one_sided(b, a)` differ in
/// general.
pub fn chamfer_one_sided(src: &PointCloud, dst: &PointCloud) -> Result<f64, GeometryError> {
    if src.is_empty() || dst.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    Ok(chamfer_to_index(src.points(), &NnIndex::build(dst)))
}

/// One-sided Chamfer against a prebuilt index over the destination cloud.
pub fn chamfer_to_index(src: &[Vec3], dst: &NnIndex) -> f64 {
    let sum: f64 = src.iter().map(|&p| dst.nearest_point(p).2).sum();
    sum / src.len() as f64
}

/// One-sided Chamfer of `g · src` against an index, without materializing the
/// transformed cloud.
pub fn chamfer_transformed(g: &RigidTransform, src: &[Vec3], dst: &NnIndex) -> f64 {
    let sum: f64 = src.iter().map(|&p| dst.nearest_point(g.apply(p)).2).sum();
    sum / src.len() as f64
}

/// Average of both one-sided directions. Not used by the motion metrics.
pub fn chamfer_symmetric(a: &PointCloud, b: &PointCloud) -> Result<f64, GeometryError> {
    Ok(0.5 * (chamfer_one_sided(a, b)? + chamfer_one_sided(b, a)?))
}

/// Distance from the vertex centroid of `fg` to the closest background point.
pub fn center_distance(fg: &TriMesh, bg_points: &PointCloud) -> Result<f64, GeometryError> {
    if fg.vertices().is_empty() || bg_points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let c = fg.centroid();
    Ok(NnIndex::build(bg_points).nearest_point(c).2)
}
