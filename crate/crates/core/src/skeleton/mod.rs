//! Articulated skeleton: `B` joints connecting `B + 1` bones, forward
//! kinematics, Gaussian bones, skinning weights and dual-quaternion blend
//! skinning.
//!
//! Bone 0 is the root bone. Joint `j` drives bone `j + 1` and hangs off bone
//! `parents[j] + 1` (or the root bone when `parents[j] == -1`).

mod skinning;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_axis_angle, GeometryError, RigidTransform, UnitQuat, Vec3};

pub use skinning::{
    gaussian_bones, limb_vertices, pose_mesh, qbs_warp, skinning_weights, warp_points, GaussianBone, SkinWeights,
    SkinnedMesh, DEFAULT_TEMPERATURE,
};

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("invalid skeleton: {0}")]
    Invalid(String),
    #[error("parent links form a cycle through joint {0}")]
    Cycle(usize),
    #[error("articulation has {got} joints, skeleton has {expected}")]
    JointCount { expected: usize, got: usize },
    #[error("{weights} weight rows for {points} points")]
    WeightCount { weights: usize, points: usize },
    #[error("blended rotation at vertex {0} has vanishing norm")]
    ZeroNormBlend(usize),
    #[error("no vertex is dominated by a limb bone")]
    NoLimbVertices,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// On-disk layout of a skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SkeletonDoc {
    parents: Vec<i64>,
    rest_joints: Vec<[f64; 3]>,
    bone_scales: Vec<[f64; 3]>,
    limb_bones: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    rest_joints: Vec<Vec3>,
    bone_scales: Vec<Vec3>,
    limb_bones: Vec<usize>,
    /// joints ordered so that every parent precedes its children
    order: Vec<usize>,
}

impl Skeleton {
    /// `parents[j] < 0` attaches joint `j` to the root bone.
    pub fn new(
        parents: &[i64],
        rest_joints: Vec<Vec3>,
        bone_scales: Vec<Vec3>,
        limb_bones: Vec<usize>,
    ) -> Result<Skeleton, SkeletonError> {
        let b = parents.len();
        if b == 0 {
            return Err(SkeletonError::Invalid("skeleton needs at least one joint".into()));
        }
        if rest_joints.len() != b {
            return Err(SkeletonError::Invalid(format!("{} rest joints for {b} parents", rest_joints.len())));
        }
        if bone_scales.len() != b + 1 {
            return Err(SkeletonError::Invalid(format!(
                "{} bone scales, expected {} (joints + 1)",
                bone_scales.len(),
                b + 1
            )));
        }
        let mut links = Vec::with_capacity(b);
        for (j, &p) in parents.iter().enumerate() {
            links.push(match p {
                p if p < 0 => None,
                p if (p as usize) < b && p as usize != j => Some(p as usize),
                p if p as usize == j => return Err(SkeletonError::Cycle(j)),
                p => return Err(SkeletonError::Invalid(format!("joint {j} has parent {p} out of range"))),
            });
        }
        if let Some(j) = rest_joints.iter().position(|v| !v.is_finite()) {
            return Err(SkeletonError::Invalid(format!("rest joint {j} is not finite")));
        }
        if let Some(i) = bone_scales.iter().position(|s| !(s.x > 0.0 && s.y > 0.0 && s.z > 0.0 && s.is_finite())) {
            return Err(SkeletonError::Invalid(format!("bone scale {i} must be positive and finite")));
        }
        if let Some(&l) = limb_bones.iter().find(|&&l| l > b) {
            return Err(SkeletonError::Invalid(format!("limb bone {l} out of range (0..={b})")));
        }
        let order = topological_order(&links)?;
        Ok(Skeleton { parents: links, rest_joints, bone_scales, limb_bones, order })
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_bones(&self) -> usize {
        self.parents.len() + 1
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// Bone that joint `j` hangs off.
    pub fn parent_bone(&self, joint: usize) -> usize {
        self.parents[joint].map_or(0, |p| p + 1)
    }

    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }

    pub fn bone_scales(&self) -> &[Vec3] {
        &self.bone_scales
    }

    pub fn limb_bones(&self) -> &[usize] {
        &self.limb_bones
    }

    /// Joint indices with parents before children.
    pub fn joint_order(&self) -> &[usize] {
        &self.order
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents.iter().enumerate().filter(move |(_, p)| **p == Some(joint)).map(|(c, _)| c)
    }

    pub fn to_json(&self) -> Result<String, SkeletonError> {
        let doc = SkeletonDoc {
            parents: self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            rest_joints: self.rest_joints.iter().map(|v| v.to_array()).collect(),
            bone_scales: self.bone_scales.iter().map(|v| v.to_array()).collect(),
            limb_bones: self.limb_bones.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Skeleton, SkeletonError> {
        let doc: SkeletonDoc = serde_json::from_str(text)?;
        Skeleton::new(
            &doc.parents,
            doc.rest_joints.into_iter().map(Vec3::from_array).collect(),
            doc.bone_scales.into_iter().map(Vec3::from_array).collect(),
            doc.limb_bones,
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Skeleton, SkeletonError> {
        Skeleton::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), SkeletonError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>, SkeletonError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks = vec![Mark::New; parents.len()];
    let mut order = Vec::with_capacity(parents.len());
    for start in 0..parents.len() {
        // walk up to the first finished ancestor, then emit top-down
        let mut chain = Vec::new();
        let mut cur = Some(start);
        while let Some(j) = cur {
            match marks[j] {
                Mark::Done => break,
                Mark::Active => return Err(SkeletonError::Cycle(j)),
                Mark::New => {
                    marks[j] = Mark::Active;
                    chain.push(j);
                    cur = parents[j];
                }
            }
        }
        for &j in chain.iter().rev() {
            marks[j] = Mark::Done;
            order.push(j);
        }
    }
    Ok(order)
}

/// Per-joint local rotations for one frame, axis-angle radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ArticulationFrame {
    rotations: Vec<Vec3>,
}

impl From<ArticulationFrame> for Vec<f64> {
    fn from(a: ArticulationFrame) -> Self {
        a.to_flat()
    }
}

impl TryFrom<Vec<f64>> for ArticulationFrame {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        ArticulationFrame::from_flat(&v).ok_or_else(|| format!("{} values is not a whole number of joints", v.len()))
    }
}

impl ArticulationFrame {
    /// Every rotation is wrapped to magnitude below pi.
    pub fn new(rotations: Vec<Vec3>) -> ArticulationFrame {
        ArticulationFrame { rotations: rotations.into_iter().map(wrap_axis_angle).collect() }
    }

    pub fn zeros(joints: usize) -> ArticulationFrame {
        ArticulationFrame { rotations: vec![Vec3::ZERO; joints] }
    }

    /// Row-major `[x0, y0, z0, x1, ...]`.
    pub fn from_flat(v: &[f64]) -> Option<ArticulationFrame> {
        if v.len() % 3 != 0 || v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some(ArticulationFrame::new(v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| r.to_array()).collect()
    }

    pub fn rotations(&self) -> &[Vec3] {
        &self.rotations
    }

    pub fn num_joints(&self) -> usize {
        self.rotations.len()
    }
}

/// Canonical-to-posed transform of every bone, root bone first.
#[derive(Clone, Debug, PartialEq)]
pub struct BonePose(pub Vec<RigidTransform>);

impl BonePose {
    pub fn transforms(&self) -> &[RigidTransform] {
        &self.0
    }

    pub fn identity(bones: usize) -> BonePose {
        BonePose(vec![RigidTransform::IDENTITY; bones])
    }
}

/// Chains joint rotations from the root outwards. Each joint rotates its bone
/// (and everything below it) about the joint's rest position; the root bone
/// stays fixed because the global pose is applied separately.
pub fn forward_kinematics(skel: &Skeleton, frame: &ArticulationFrame) -> Result<BonePose, SkeletonError> {
    if frame.num_joints() != skel.num_joints() {
        return Err(SkeletonError::JointCount { expected: skel.num_joints(), got: frame.num_joints() });
    }
    let mut bones = vec![RigidTransform::IDENTITY; skel.num_bones()];
    for &j in skel.joint_order() {
        let local = RigidTransform::rotation_about(
            UnitQuat::from_axis_angle(frame.rotations()[j]),
            skel.rest_joints()[j],
        );
        bones[j + 1] = bones[skel.parent_bone(j)].compose(&local);
    }
    Ok(BonePose(bones))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn chain2() -> Skeleton {
        Skeleton::new(
            &[-1, 0],
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)],
            vec![Vec3::splat(0.3); 3],
            vec![2],
        )
        .unwrap()
    }

    fn mat_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut o = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                o[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        o
    }

    fn translate(t: Vec3) -> [[f64; 4]; 4] {
        [[1.0, 0.0, 0.0, t.x], [0.0, 1.0, 0.0, t.y], [0.0, 0.0, 1.0, t.z], [0.0, 0.0, 0.0, 1.0]]
    }

    fn rotate(v: Vec3) -> [[f64; 4]; 4] {
        // Rodrigues, independent of the quaternion path
        let angle = v.norm();
        let mut m = [[0.0; 4]; 4];
        m[3][3] = 1.0;
        let (k, c, s) = if angle > 0.0 { (v / angle, angle.cos(), angle.sin()) } else { (Vec3::X, 1.0, 0.0) };
        let kk = [k.x, k.y, k.z];
        let cross = [[0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                m[i][j] = c * id + s * cross[i][j] + (1.0 - c) * kk[i] * kk[j];
            }
        }
        m
    }

    fn apply(m: &[[f64; 4]; 4], p: Vec3) -> Vec3 {
        let h = [p.x, p.y, p.z, 1.0];
        let r: Vec<f64> = (0..3).map(|i| (0..4).map(|k| m[i][k] * h[k]).sum()).collect();
        Vec3::new(r[0], r[1], r[2])
    }

    /// T(J) R(A) T(-J) chained along parents, as dense matrices.
    fn matrix_fk(skel: &Skeleton, frame: &ArticulationFrame) -> Vec<[[f64; 4]; 4]> {
        let id = translate(Vec3::ZERO);
        let mut out = vec![id; skel.num_bones()];
        for &j in skel.joint_order() {
            let jp = skel.rest_joints()[j];
            let local = mat_mul(&mat_mul(&translate(jp), &rotate(frame.rotations()[j])), &translate(-jp));
            out[j + 1] = mat_mul(&out[skel.parent_bone(j)], &local);
        }
        out
    }

    #[test]
    fn zero_articulation_is_identity() {
        let skel = chain2();
        let pose = forward_kinematics(&skel, &ArticulationFrame::zeros(2)).unwrap();
        assert!(pose.transforms().iter().all(|t| *t == RigidTransform::IDENTITY));
    }

    #[test]
    fn quarter_turn_moves_child_joint() {
        let skel = chain2();
        let frame = ArticulationFrame::new(vec![Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::ZERO]);
        let pose = forward_kinematics(&skel, &frame).unwrap();
        let child = pose.transforms()[1].apply(skel.rest_joints()[1]);
        assert!(child.distance(Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
        let oracle = matrix_fk(&skel, &frame);
        assert!(apply(&oracle[1], skel.rest_joints()[1]).distance(child) < 1e-12);
    }

    #[test]
    fn random_frames_match_matrix_chain() {
        let skel = Skeleton::new(
            &[-1, 0, 1, 0, -1],
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.5, 0.1, 0.0),
                Vec3::new(0.9, 0.3, 0.2),
                Vec3::new(0.4, -0.4, 0.1),
                Vec3::new(-0.5, 0.0, 0.0),
            ],
            vec![Vec3::splat(0.2); 6],
            vec![3],
        )
        .unwrap();
        let frame = ArticulationFrame::new(vec![
            Vec3::new(0.3, -0.2, 0.5),
            Vec3::new(-0.7, 0.4, 0.1),
            Vec3::new(0.2, 0.9, -0.3),
            Vec3::new(1.1, 0.0, 0.4),
            Vec3::new(-0.2, -0.5, 0.8),
        ]);
        let pose = forward_kinematics(&skel, &frame).unwrap();
        let oracle = matrix_fk(&skel, &frame);
        let probe = Vec3::new(0.3, -0.8, 1.7);
        for (t, m) in pose.transforms().iter().zip(&oracle) {
            assert!(t.apply(probe).distance(apply(m, probe)) < 1e-12);
        }
    }

    #[test]
    fn cycles_are_rejected() {
        let r = Skeleton::new(&[1, 0], vec![Vec3::ZERO, Vec3::X], vec![Vec3::splat(1.0); 3], vec![]);
        assert!(matches!(r, Err(SkeletonError::Cycle(_))));
        let r = Skeleton::new(&[0], vec![Vec3::ZERO], vec![Vec3::splat(1.0); 2], vec![]);
        assert!(matches!(r, Err(SkeletonError::Cycle(0))));
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(Skeleton::new(&[-1], vec![Vec3::ZERO], vec![Vec3::splat(1.0)], vec![]).is_err());
        assert!(Skeleton::new(&[-1], vec![Vec3::ZERO], vec![Vec3::splat(1.0), Vec3::new(1.0, 0.0, 1.0)], vec![])
            .is_err());
        assert!(Skeleton::new(&[-1], vec![Vec3::ZERO], vec![Vec3::splat(1.0); 2], vec![5]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let skel = chain2();
        let back = Skeleton::from_json(&skel.to_json().unwrap()).unwrap();
        assert_eq!(back, skel);
    }

    #[test]
    fn frames_wrap_large_angles() {
        let f = ArticulationFrame::new(vec![Vec3::new(0.0, 5.0, 0.0)]);
        assert!(f.rotations()[0].norm() < std::f64::consts::PI);
        assert!((f.rotations()[0].y - (5.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }
}
