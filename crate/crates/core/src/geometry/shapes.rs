//! Triangulated primitives used to assemble synthetic scenes and bodies.

use std::f64::consts::PI;

use super::{TriMesh, UnitQuat, Vec3};

/// Axis-aligned box, 8 vertices and 12 outward-wound triangles.
pub fn cuboid(center: Vec3, half: Vec3) -> TriMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        vertices.push(center + Vec3::new(sx * half.x, sy * half.y, sz * half.z));
    }
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriMesh::new(vertices, faces).expect("cuboid is well formed")
}

/// Horizontal rectangle at height `y`, facing +y, two triangles.
pub fn floor_quad(half_x: f64, half_z: f64, y: f64) -> TriMesh {
    let vertices = vec![
        Vec3::new(-half_x, y, -half_z),
        Vec3::new(half_x, y, -half_z),
        Vec3::new(half_x, y, half_z),
        Vec3::new(-half_x, y, half_z),
    ];
    TriMesh::new(vertices, vec![[0, 2, 1], [0, 3, 2]]).expect("quad is well formed")
}

/// Closed capsule around the segment `a -> b`.
///
/// `rings` latitude rings per hemisphere, `segments` around the axis. A
/// zero-length segment yields a sphere.
pub fn capsule(a: Vec3, b: Vec3, radius: f64, rings: usize, segments: usize) -> TriMesh {
    let rings = rings.max(1);
    let segments = segments.max(3);
    let axis = b - a;
    let frame = UnitQuat::rotation_between(Vec3::Y, if axis.norm() > 0.0 { axis } else { Vec3::Y });
    let len = axis.norm();
    // latitude profile from bottom pole to top pole; each ring is (height, ring radius)
    let mut profile = Vec::new();
    for i in 1..=rings {
        let phi = -PI / 2.0 + PI / 2.0 * i as f64 / rings as f64;
        profile.push((radius * phi.sin(), radius * phi.cos()));
    }
    let bottom_len = profile.len();
    for i in 0..bottom_len {
        let (h, r) = profile[bottom_len - 1 - i];
        profile.push((len - h, r));
    }
    let mut vertices = vec![a + frame.rotate(Vec3::new(0.0, -radius, 0.0))];
    for &(h, r) in &profile {
        for s in 0..segments {
            let theta = 2.0 * PI * s as f64 / segments as f64;
            let local = Vec3::new(r * theta.cos(), h, r * theta.sin());
            vertices.push(a + frame.rotate(local));
        }
    }
    vertices.push(a + frame.rotate(Vec3::new(0.0, len + radius, 0.0)));
    let top = vertices.len() - 1;
    let ring = |k: usize, s: usize| 1 + k * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s), ring(0, s + 1)]);
    }
    for k in 0..profile.len() - 1 {
        for s in 0..segments {
            let (p, q, r, t) = (ring(k, s), ring(k, s + 1), ring(k + 1, s + 1), ring(k + 1, s));
            faces.push([p, t, r]);
            faces.push([p, r, q]);
        }
    }
    let last = profile.len() - 1;
    for s in 0..segments {
        faces.push([top, ring(last, s + 1), ring(last, s)]);
    }
    TriMesh::new(vertices, faces).expect("capsule is well formed")
}
