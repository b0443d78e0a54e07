use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, RigidTransform, Vec3};

/// Non-empty list of finite points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(format!("point {i}")));
        }
        Ok(PointCloud { points })
    }

    /// Caller guarantees the invariants (used where points come from
    /// already-validated data through rigid maps).
    pub(crate) fn from_points_unchecked(points: Vec<Vec3>) -> Self {
        debug_assert!(!points.is_empty());
        PointCloud { points }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }

    pub fn transformed(&self, g: &RigidTransform) -> PointCloud {
        PointCloud::from_points_unchecked(self.points.iter().map(|&p| g.apply(p)).collect())
    }

    pub fn translated(&self, offset: Vec3) -> PointCloud {
        PointCloud::from_points_unchecked(self.points.iter().map(|&p| p + offset).collect())
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds(&self.points)
    }

    /// Flattened `x y z x y z ...` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, GeometryError> {
        if flat.len() % 3 != 0 {
            return Err(GeometryError::InvalidMesh(format!(
                "flat coordinate list of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        PointCloud::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    labels: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        Self::with_labels(vertices, faces, None)
    }

    pub fn with_labels(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self, GeometryError> {
        if faces.is_empty() {
            return Err(GeometryError::InvalidMesh("mesh has no faces".into()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(format!("vertex {i}")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!(
                    "face {fi} {f:?} indexes past {} vertices",
                    vertices.len()
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::InvalidMesh(format!("face {fi} {f:?} repeats a vertex")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != vertices.len() {
                return Err(GeometryError::InvalidMesh(format!(
                    "{} labels for {} vertices",
                    l.len(),
                    vertices.len()
                )));
            }
        }
        Ok(TriMesh { vertices, faces, labels })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud::from_points_unchecked(self.vertices.clone())
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Vertex centroid.
    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    /// Same topology with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Same topology with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "{} replacement vertices for a mesh of {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(format!("vertex {i}")));
        }
        Ok(TriMesh { vertices, faces: self.faces.clone(), labels: self.labels.clone() })
    }

    pub fn transformed(&self, g: &RigidTransform) -> TriMesh {
        self.map_vertices(|v| g.apply(v))
    }

    /// Appends `other`, offsetting its face indices.
    pub fn merge(&mut self, other: &TriMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        self.labels = match (self.labels.take(), &other.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    let sum = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    sum / n
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for &p in points {
        lo = lo.min_elem(p);
        hi = hi.max_elem(p);
    }
    (lo, hi)
}

/// Things that can be translated so their centroid sits at the origin.
pub trait Recenter: Sized {
    fn centroid(&self) -> Vec3;
    fn translate(&self, offset: Vec3) -> Self;

    /// Returns the recentered value and the offset that was added.
    fn recenter(&self) -> (Self, Vec3) {
        let offset = -self.centroid();
        (self.translate(offset), offset)
    }
}

impl Recenter for PointCloud {
    fn centroid(&self) -> Vec3 {
        PointCloud::centroid(self)
    }
    fn translate(&self, offset: Vec3) -> Self {
        self.translated(offset)
    }
}

impl Recenter for TriMesh {
    fn centroid(&self) -> Vec3 {
        TriMesh::centroid(self)
    }
    fn translate(&self, offset: Vec3) -> Self {
        self.map_vertices(|v| v + offset)
    }
}

/// Area-weighted uniform samples on the mesh surface, deterministic per seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    Ok(sample_surface_with_faces(mesh, n, seed)?.0)
}

/// As [`sample_surface`], also returning the source face of every sample.
pub fn sample_surface_with_faces(
    mesh: &TriMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>), GeometryError> {
    if n == 0 {
        return Err(GeometryError::EmptyCloud);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(a * u + b * v + c * w);
        faces.push(f);
    }
    Ok((PointCloud::from_points_unchecked(points), faces))
}
