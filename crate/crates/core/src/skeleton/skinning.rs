use crate::geometry::{DualQuat, PointCloud, Quat, RigidTransform, TriMesh, UnitQuat, Vec3};

use super::{forward_kinematics, ArticulationFrame, BonePose, Skeleton, SkeletonError};

/// Softmax temperature applied to the negative squared Mahalanobis distance.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Anisotropic Gaussian attached to a bone; local +z runs along the bone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBone {
    pub center: Vec3,
    pub orientation: UnitQuat,
    pub scale: Vec3,
}

impl GaussianBone {
    /// `(x - c)^T Σ^{-1} (x - c)` with `Σ = R diag(scale²) Rᵀ`.
    pub fn mahalanobis_sq(&self, x: Vec3) -> f64 {
        let local = self.orientation.inverse().rotate(x - self.center).component_div(self.scale);
        local.norm_squared()
    }
}

/// Gaussian bones in canonical space.
///
/// Bone `j + 1` runs from joint `j` to its lowest-indexed child joint. A leaf
/// bone extends half its parent segment beyond the joint. The root bone sits on
/// joint 0 and keeps the identity orientation with its axis along +z; every
/// other bone's orientation is its parent's composed with the shortest arc
/// from the parent's axis to its own.
pub fn gaussian_bones(skel: &Skeleton) -> Vec<GaussianBone> {
    let joints = skel.rest_joints();
    let root_center = joints[0];
    let mut bones = vec![
        GaussianBone { center: root_center, orientation: UnitQuat::IDENTITY, scale: skel.bone_scales()[0] };
        skel.num_bones()
    ];
    for &j in skel.joint_order() {
        let head = joints[j];
        let tail = match skel.children(j).next() {
            Some(c) => joints[c],
            None => {
                let anchor = skel.parent(j).map_or(root_center, |p| joints[p]);
                head + (head - anchor) * 0.5
            }
        };
        let parent = bones[skel.parent_bone(j)];
        let parent_axis = parent.orientation.rotate(Vec3::Z);
        let dir = tail - head;
        let orientation = if dir.norm() > 1e-12 {
            UnitQuat::rotation_between(parent_axis, dir) * parent.orientation
        } else {
            parent.orientation
        };
        bones[j + 1] = GaussianBone { center: (head + tail) * 0.5, orientation, scale: skel.bone_scales()[j + 1] };
    }
    bones
}

/// Per-point convex weights over bones.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinWeights {
    rows: Vec<Vec<f64>>,
}

impl SkinWeights {
    /// Rows must be nonnegative and sum to one.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<SkinWeights, SkeletonError> {
        for (i, r) in rows.iter().enumerate() {
            let s: f64 = r.iter().sum();
            if r.iter().any(|&w| !(w >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(SkeletonError::Invalid(format!("weight row {i} is not a convex combination")));
            }
        }
        Ok(SkinWeights { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of the largest weight in row `i` (first on ties).
    pub fn dominant_bone(&self, i: usize) -> usize {
        argmax(&self.rows[i])
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `softmax(-d²_M / temperature)` over bones for every point.
pub fn skinning_weights(points: &[Vec3], bones: &[GaussianBone], temperature: f64) -> SkinWeights {
    let rows = points
        .iter()
        .map(|&x| {
            let logits: Vec<f64> = bones.iter().map(|b| -b.mahalanobis_sq(x) / temperature).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect();
    SkinWeights { rows }
}

/// Dual-quaternion linear blending of bone transforms for each point.
///
/// Bone dual quaternions are flipped into the hemisphere of the point's
/// dominant bone before blending.
pub fn warp_points(pose: &BonePose, weights: &SkinWeights, points: &[Vec3]) -> Result<Vec<Vec3>, SkeletonError> {
    if weights.len() != points.len() {
        return Err(SkeletonError::WeightCount { weights: weights.len(), points: points.len() });
    }
    let dqs: Vec<DualQuat> = pose.transforms().iter().map(DualQuat::from_rigid).collect();
    points
        .iter()
        .zip(weights.rows())
        .enumerate()
        .map(|(i, (&p, row))| {
            let pivot = dqs[argmax(row)].real.quat();
            let mut real = Quat::ZERO;
            let mut dual = Quat::ZERO;
            for (dq, &w) in dqs.iter().zip(row) {
                let sign = if dq.real.quat().dot(pivot) < 0.0 { -w } else { w };
                real = real + dq.real.quat().scale(sign);
                dual = dual + dq.dual.scale(sign);
            }
            DualQuat::normalize(real, dual, 1e-12).map(|b| b.apply(p)).ok_or(SkeletonError::ZeroNormBlend(i))
        })
        .collect()
}

/// Dense warp of canonical points under one articulation frame.
pub fn qbs_warp(
    skel: &Skeleton,
    weights: &SkinWeights,
    frame: &ArticulationFrame,
    verts: &PointCloud,
) -> Result<PointCloud, SkeletonError> {
    let pose = forward_kinematics(skel, frame)?;
    Ok(PointCloud::new(warp_points(&pose, weights, verts.points())?)?)
}

/// Articulates `mesh` and places it with the global pose `g`.
pub fn pose_mesh(
    mesh: &TriMesh,
    skel: &Skeleton,
    frame: &ArticulationFrame,
    g: &RigidTransform,
) -> Result<TriMesh, SkeletonError> {
    SkinnedMesh::new(mesh.clone(), skel.clone(), DEFAULT_TEMPERATURE)?.pose(frame, g)
}

/// Canonical vertices dominated by a limb bone, resampled with a fixed stride
/// to exactly `count` points (repeating vertices when there are fewer).
pub fn limb_vertices(mesh: &TriMesh, skel: &Skeleton, count: usize) -> Result<PointCloud, SkeletonError> {
    let weights = skinning_weights(mesh.vertices(), &gaussian_bones(skel), DEFAULT_TEMPERATURE);
    limb_vertices_with_weights(mesh, skel, &weights, count)
}

fn limb_vertices_with_weights(
    mesh: &TriMesh,
    skel: &Skeleton,
    weights: &SkinWeights,
    count: usize,
) -> Result<PointCloud, SkeletonError> {
    let selected: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .enumerate()
        .filter(|(i, _)| skel.limb_bones().contains(&weights.dominant_bone(*i)))
        .map(|(_, &v)| v)
        .collect();
    if selected.is_empty() || count == 0 {
        return Err(SkeletonError::NoLimbVertices);
    }
    let m = selected.len();
    Ok(PointCloud::new((0..count).map(|k| selected[k * m / count]).collect())?)
}

/// A mesh bound to a skeleton with precomputed skinning weights.
#[derive(Clone, Debug)]
pub struct SkinnedMesh {
    mesh: TriMesh,
    skeleton: Skeleton,
    weights: SkinWeights,
}

impl SkinnedMesh {
    pub fn new(mesh: TriMesh, skeleton: Skeleton, temperature: f64) -> Result<SkinnedMesh, SkeletonError> {
        let weights = skinning_weights(mesh.vertices(), &gaussian_bones(&skeleton), temperature);
        if let Some(i) = weights.rows().iter().position(|r| r.iter().any(|w| !w.is_finite())) {
            return Err(SkeletonError::Invalid(format!("skinning weight for vertex {i} is not finite")));
        }
        Ok(SkinnedMesh { mesh, skeleton, weights })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn weights(&self) -> &SkinWeights {
        &self.weights
    }

    pub fn limb_points(&self, count: usize) -> Result<PointCloud, SkeletonError> {
        limb_vertices_with_weights(&self.mesh, &self.skeleton, &self.weights, count)
    }

    pub fn pose(&self, frame: &ArticulationFrame, g: &RigidTransform) -> Result<TriMesh, SkeletonError> {
        let bones = forward_kinematics(&self.skeleton, frame)?;
        let warped = warp_points(&bones, &self.weights, self.mesh.vertices())?;
        Ok(self.mesh.with_vertices(warped.into_iter().map(|v| g.apply(v)).collect())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::capsule;
    use std::f64::consts::FRAC_PI_2;

    fn chain2() -> Skeleton {
        Skeleton::new(&[-1, 0], vec![Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0)], vec![Vec3::splat(0.5); 3], vec![2])
            .unwrap()
    }

    fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = ((j + 1) % 3, (j + 2) % 3);
                let (c, d) = ((i + 1) % 3, (i + 2) % 3);
                o[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
            }
        }
        o
    }

    #[test]
    fn connecting_bone_center_is_midpoint() {
        let bones = gaussian_bones(&chain2());
        assert!(bones[1].center.distance(Vec3::new(0.0, 0.0, 1.0)) < 1e-15);
        assert_eq!(bones[0].center, Vec3::ZERO);
    }

    #[test]
    fn isotropic_scale_is_scaled_euclidean() {
        let b = GaussianBone {
            center: Vec3::new(1.0, 2.0, 3.0),
            orientation: UnitQuat::new(0.3, 0.5, -0.2, 0.9),
            scale: Vec3::splat(0.5),
        };
        let x = Vec3::new(0.0, 1.0, -1.0);
        assert!((b.mahalanobis_sq(x) - x.distance_squared(b.center) / 0.25).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_matches_quadratic_form() {
        let skel = Skeleton::new(
            &[-1, 0, 1],
            vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.4, 0.3, -0.1), Vec3::new(0.2, 0.9, 0.5)],
            vec![Vec3::new(0.2, 0.3, 0.4), Vec3::new(0.1, 0.5, 0.2), Vec3::new(0.3, 0.3, 0.6), Vec3::new(0.7, 0.2, 0.1)],
            vec![],
        )
        .unwrap();
        let x = Vec3::new(0.3, -0.2, 0.8);
        for b in gaussian_bones(&skel) {
            let r = b.orientation.to_matrix();
            let s2 = [b.scale.x * b.scale.x, b.scale.y * b.scale.y, b.scale.z * b.scale.z];
            let mut sigma = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    sigma[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
                }
            }
            let inv = inv3(sigma);
            let d = (x - b.center).to_array();
            let q: f64 = (0..3).map(|i| (0..3).map(|j| d[i] * inv[i][j] * d[j]).sum::<f64>()).sum();
            assert!((q - b.mahalanobis_sq(x)).abs() < 1e-9 * q.max(1.0), "{q} vs {}", b.mahalanobis_sq(x));
        }
    }

    #[test]
    fn child_bone_axis_follows_segment() {
        let skel = chain2();
        let bones = gaussian_bones(&skel);
        // bone 1 runs along +z from joint 0 to joint 1
        assert!(bones[1].orientation.rotate(Vec3::Z).distance(Vec3::Z) < 1e-12);
        // leaf bone 2 extends past joint 1 by half the parent segment
        assert!(bones[2].center.distance(Vec3::new(0.0, 0.0, 2.5)) < 1e-12);
    }

    #[test]
    fn equidistant_identical_bones_split_evenly() {
        let bone = GaussianBone { center: Vec3::new(1.0, 0.0, 0.0), orientation: UnitQuat::IDENTITY, scale: Vec3::splat(1.0) };
        let mirror = GaussianBone { center: Vec3::new(-1.0, 0.0, 0.0), ..bone };
        let w = skinning_weights(&[Vec3::ZERO], &[bone, mirror], 1.0);
        assert_eq!(w.rows()[0], vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_saturates_at_bone_center() {
        let near = GaussianBone { center: Vec3::ZERO, orientation: UnitQuat::IDENTITY, scale: Vec3::splat(0.1) };
        let far = GaussianBone { center: Vec3::new(1.0, 0.0, 0.0), ..near };
        let w = skinning_weights(&[Vec3::ZERO], &[near, far], 1.0);
        assert!(w.rows()[0][0] > 1.0 - 1e-9);
    }

    #[test]
    fn weights_match_direct_softmax() {
        let skel = chain2();
        let bones = gaussian_bones(&skel);
        let pts = [Vec3::new(0.2, 0.1, 0.4), Vec3::new(-0.3, 0.2, 1.9)];
        let w = skinning_weights(&pts, &bones, 1.0);
        for (row, p) in w.rows().iter().zip(pts) {
            let e: Vec<f64> = bones.iter().map(|b| (-b.mahalanobis_sq(p)).exp()).collect();
            let s: f64 = e.iter().sum();
            for (a, b) in row.iter().zip(e) {
                assert!((a - b / s).abs() < 1e-9);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn one_hot(n: usize, bones: usize, hot: usize) -> SkinWeights {
        SkinWeights::from_rows(vec![(0..bones).map(|b| if b == hot { 1.0 } else { 0.0 }).collect(); n]).unwrap()
    }

    #[test]
    fn root_weight_at_rest_leaves_points() {
        let skel = chain2();
        let pts = PointCloud::new(vec![Vec3::new(0.3, 0.2, 0.1), Vec3::new(-1.0, 0.5, 2.0)]).unwrap();
        let out = qbs_warp(&skel, &one_hot(2, 3, 0), &ArticulationFrame::zeros(2), &pts).unwrap();
        for (a, b) in out.points().iter().zip(pts.points()) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn single_bone_weight_is_rigid() {
        let skel = chain2();
        let frame = ArticulationFrame::new(vec![Vec3::new(0.4, -0.3, 0.8), Vec3::new(0.1, 0.6, -0.2)]);
        let pose = forward_kinematics(&skel, &frame).unwrap();
        let pts = vec![Vec3::new(0.3, 0.2, 0.1), Vec3::new(-1.0, 0.5, 2.0)];
        let out = warp_points(&pose, &one_hot(2, 3, 2), &pts).unwrap();
        for (a, p) in out.iter().zip(&pts) {
            assert!(a.distance(pose.transforms()[2].apply(*p)) < 1e-9);
        }
    }

    #[test]
    fn coaxial_blend_bisects_angle() {
        let pivot = Vec3::new(0.2, -0.1, 0.3);
        let axis = Vec3::new(1.0, 2.0, -0.5).try_normalize().unwrap();
        let (a, b) = (0.3, 1.4);
        let pose = BonePose(vec![
            RigidTransform::rotation_about(UnitQuat::from_axis_angle(axis * a), pivot),
            RigidTransform::rotation_about(UnitQuat::from_axis_angle(axis * b), pivot),
        ]);
        let w = SkinWeights::from_rows(vec![vec![0.5, 0.5]; 3]).unwrap();
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-0.4, 0.7, 1.1), Vec3::new(0.0, 0.0, 0.0)];
        let out = warp_points(&pose, &w, &pts).unwrap();
        let expected = RigidTransform::rotation_about(UnitQuat::from_axis_angle(axis * (0.5 * (a + b))), pivot);
        for (o, p) in out.iter().zip(&pts) {
            assert!(o.distance(expected.apply(*p)) < 1e-6);
        }
    }

    #[test]
    fn blend_survives_antipodal_representatives() {
        // same rotation stored with opposite quaternion signs must not cancel
        let r = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.5, 0.0));
        let flipped = UnitQuat::new(-r.quat().w, -r.quat().x, -r.quat().y, -r.quat().z);
        let pose = BonePose(vec![RigidTransform::from_rotation(r), RigidTransform::from_rotation(flipped)]);
        let w = SkinWeights::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let out = warp_points(&pose, &w, &[p]).unwrap();
        assert!(out[0].distance(r.rotate(p)) < 1e-12);
    }

    #[test]
    fn vanishing_blend_is_an_error() {
        let r = RigidTransform::IDENTITY;
        let pose = BonePose(vec![r, r]);
        let w = SkinWeights { rows: vec![vec![0.0, 0.0]] };
        assert!(matches!(warp_points(&pose, &w, &[Vec3::ZERO]), Err(SkeletonError::ZeroNormBlend(0))));
    }

    #[test]
    fn pose_mesh_zero_articulation_is_rigid() {
        let skel = chain2();
        let mesh = capsule(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), 0.3, 3, 8);
        let same = pose_mesh(&mesh, &skel, &ArticulationFrame::zeros(2), &RigidTransform::IDENTITY).unwrap();
        for (a, b) in same.vertices().iter().zip(mesh.vertices()) {
            assert!(a.distance(*b) < 1e-12);
        }
        let g = RigidTransform::new(UnitQuat::new(0.9, 0.1, 0.3, -0.2), Vec3::new(1.0, -2.0, 0.5));
        let moved = pose_mesh(&mesh, &skel, &ArticulationFrame::zeros(2), &g).unwrap();
        for (a, b) in moved.vertices().iter().zip(mesh.vertices()) {
            assert!(a.distance(g.apply(*b)) < 1e-9);
        }
        assert_eq!(moved.faces(), mesh.faces());
    }

    #[test]
    fn pose_mesh_decomposes_into_warp_then_place() {
        let skel = chain2();
        let mesh = capsule(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), 0.3, 3, 8);
        let frame = ArticulationFrame::new(vec![Vec3::new(0.2, 0.5, -0.1), Vec3::new(-0.6, 0.0, 0.3)]);
        let g = RigidTransform::new(UnitQuat::new(0.5, -0.5, 0.1, 0.2), Vec3::new(0.0, 1.0, 2.0));
        let posed = pose_mesh(&mesh, &skel, &frame, &g).unwrap();
        let weights = skinning_weights(mesh.vertices(), &gaussian_bones(&skel), DEFAULT_TEMPERATURE);
        let warped = qbs_warp(&skel, &weights, &frame, &mesh.vertex_cloud()).unwrap();
        for (a, w) in posed.vertices().iter().zip(warped.points()) {
            assert!(a.distance(g.apply(*w)) < 1e-12);
        }
    }

    #[test]
    fn limb_selection_is_lower_half() {
        // joint 0 at the top, foot joint at z = 0, bone 2 is the foot
        let skel = Skeleton::new(
            &[-1, 0],
            vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 1.0)],
            vec![Vec3::splat(0.5), Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.5, 0.5, 0.5)],
            vec![2],
        )
        .unwrap();
        let mesh = capsule(Vec3::new(0.0, 0.0, 0.3), Vec3::new(0.0, 0.0, 2.5), 0.2, 2, 6);
        let bones = gaussian_bones(&skel);
        let weights = skinning_weights(mesh.vertices(), &bones, 1.0);
        let expected: Vec<Vec3> = mesh
            .vertices()
            .iter()
            .enumerate()
            .filter(|(i, _)| weights.dominant_bone(*i) == 2)
            .map(|(_, &v)| v)
            .collect();
        assert!(!expected.is_empty());
        let picked = limb_vertices(&mesh, &skel, expected.len()).unwrap();
        assert_eq!(picked.points(), expected.as_slice());
        assert!(picked.points().iter().all(|v| v.z < 1.25));
        let again = limb_vertices(&mesh, &skel, 7).unwrap();
        assert_eq!(again, limb_vertices(&mesh, &skel, 7).unwrap());
        assert_eq!(again.len(), 7);
    }

    #[test]
    fn all_limb_bones_select_everything() {
        let skel = Skeleton::new(&[-1, 0], vec![Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0)], vec![Vec3::splat(0.5); 3], vec![0, 1, 2])
            .unwrap();
        let mesh = capsule(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), 0.3, 2, 6);
        let n = mesh.vertices().len();
        let picked = limb_vertices(&mesh, &skel, n).unwrap();
        assert_eq!(picked.points(), mesh.vertices());
    }

    #[test]
    fn no_limb_vertices_is_an_error() {
        let skel = Skeleton::new(&[-1], vec![Vec3::ZERO], vec![Vec3::splat(0.5); 2], vec![]).unwrap();
        let mesh = capsule(Vec3::ZERO, Vec3::Z, 0.3, 2, 6);
        assert!(matches!(limb_vertices(&mesh, &skel, 4), Err(SkeletonError::NoLimbVertices)));
    }

    #[test]
    fn rotation_about_z_preserves_radius() {
        let skel = chain2();
        let frame = ArticulationFrame::new(vec![Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::ZERO]);
        let pose = forward_kinematics(&skel, &frame).unwrap();
        let pts = vec![Vec3::new(0.7, 0.1, 0.4)];
        let out = warp_points(&pose, &one_hot(1, 3, 1), &pts).unwrap();
        assert!((out[0].norm() - pts[0].norm()).abs() < 1e-12);
    }
}
