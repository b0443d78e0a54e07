use crate::geometry::shapes::capsule;
use crate::geometry::{PointCloud, TriMesh, Vec3};
use crate::skeleton::{SkinnedMesh, Skeleton, DEFAULT_TEMPERATURE};

use super::DataError;

pub const SPINE_MID: usize = 0;
pub const SPINE_FRONT: usize = 1;
pub const NECK: usize = 2;
pub const TAIL: usize = 3;
pub const NUM_JOINTS: usize = 16;
/// front left, front right, back left, back right
pub const NUM_LEGS: usize = 4;

pub fn hip(leg: usize) -> usize {
    4 + 3 * leg
}

pub fn knee(leg: usize) -> usize {
    5 + 3 * leg
}

pub fn ankle(leg: usize) -> usize {
    6 + 3 * leg
}

/// Proportions of the capsule-built quadruped. Canonical frame: +y up, +z
/// forward, body centered on the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadrupedSpec {
    pub body_length: f64,
    pub body_radius: f64,
    /// hip to knee and knee to ankle
    pub leg_segment: f64,
    pub leg_radius: f64,
    pub foot_length: f64,
    pub foot_radius: f64,
    /// half the distance between left and right legs
    pub hip_spread: f64,
    pub rings: usize,
    pub segments: usize,
}

impl Default for QuadrupedSpec {
    fn default() -> Self {
        QuadrupedSpec {
            body_length: 0.34,
            body_radius: 0.06,
            leg_segment: 0.085,
            leg_radius: 0.016,
            foot_length: 0.03,
            foot_radius: 0.009,
            hip_spread: 0.045,
            rings: 3,
            segments: 8,
        }
    }
}

impl QuadrupedSpec {
    fn hip_height(&self) -> f64 {
        -0.5 * self.body_radius
    }

    fn hip_z(&self, leg: usize) -> f64 {
        let z = 0.5 * self.body_length - 0.04;
        if leg < 2 {
            z
        } else {
            -z
        }
    }

    fn hip_x(&self, leg: usize) -> f64 {
        if leg % 2 == 0 {
            self.hip_spread
        } else {
            -self.hip_spread
        }
    }

    /// Vertical distance from the body origin to the soles.
    pub fn stand_height(&self) -> f64 {
        -self.hip_height() + 2.0 * self.leg_segment + self.foot_radius
    }
}

/// Skinned template mesh with its skeleton.
#[derive(Clone, Debug)]
pub struct Quadruped {
    pub spec: QuadrupedSpec,
    pub skinned: SkinnedMesh,
}

impl Quadruped {
    pub fn build(spec: &QuadrupedSpec) -> Result<Quadruped, DataError> {
        let s = spec;
        let half = 0.5 * s.body_length;
        let hy = s.hip_height();
        let mut joints = vec![Vec3::ZERO; NUM_JOINTS];
        let mut parents = vec![-1i64; NUM_JOINTS];
        joints[SPINE_MID] = Vec3::ZERO;
        joints[SPINE_FRONT] = Vec3::new(0.0, 0.0, 0.7 * half);
        parents[SPINE_FRONT] = SPINE_MID as i64;
        joints[NECK] = Vec3::new(0.0, 0.5 * s.body_radius, half);
        parents[NECK] = SPINE_FRONT as i64;
        joints[TAIL] = Vec3::new(0.0, 0.3 * s.body_radius, -half);
        for leg in 0..NUM_LEGS {
            let (x, z) = (s.hip_x(leg), s.hip_z(leg));
            joints[hip(leg)] = Vec3::new(x, hy, z);
            joints[knee(leg)] = Vec3::new(x, hy - s.leg_segment, z);
            joints[ankle(leg)] = Vec3::new(x, hy - 2.0 * s.leg_segment, z);
            parents[hip(leg)] = if leg < 2 { SPINE_FRONT as i64 } else { -1 };
            parents[knee(leg)] = hip(leg) as i64;
            parents[ankle(leg)] = knee(leg) as i64;
        }

        let r = s.body_radius;
        let seg = s.leg_segment;
        let mut scales = vec![Vec3::ZERO; NUM_JOINTS + 1];
        scales[0] = Vec3::new(r * 1.2, r * 1.2, half);
        scales[SPINE_MID + 1] = Vec3::new(r * 1.2, r * 1.2, 0.5 * half);
        scales[SPINE_FRONT + 1] = Vec3::new(r * 1.2, r * 1.2, 0.4 * half);
        scales[NECK + 1] = Vec3::new(r, r, 0.5 * half);
        scales[TAIL + 1] = Vec3::new(0.5 * r, 0.5 * r, 0.4 * half);
        for leg in 0..NUM_LEGS {
            scales[hip(leg) + 1] = Vec3::new(1.4 * s.leg_radius, 1.4 * s.leg_radius, 0.55 * seg);
            scales[knee(leg) + 1] = Vec3::new(1.4 * s.leg_radius, 1.4 * s.leg_radius, 0.55 * seg);
            scales[ankle(leg) + 1] = Vec3::splat(2.5 * s.foot_radius + 0.5 * s.foot_length);
        }
        let limb_bones = (0..NUM_LEGS).map(|l| ankle(l) + 1).collect();
        let skel = Skeleton::new(&parents, joints.clone(), scales, limb_bones)?;

        let (rings, segs) = (s.rings, s.segments);
        let mut mesh = capsule(Vec3::new(0.0, 0.0, -half), Vec3::new(0.0, 0.0, half), r, rings, segs);
        let head_tip = joints[NECK] + Vec3::new(0.0, 0.8 * r, 1.3 * r);
        mesh.merge(&capsule(joints[NECK], head_tip, 0.7 * r, rings, segs));
        let tail_tip = joints[TAIL] + Vec3::new(0.0, 0.6 * r, -2.2 * r);
        mesh.merge(&capsule(joints[TAIL], tail_tip, 0.2 * r, rings, segs));
        for leg in 0..NUM_LEGS {
            let (h, k, a) = (joints[hip(leg)], joints[knee(leg)], joints[ankle(leg)]);
            mesh.merge(&capsule(h, k, s.leg_radius, rings, segs));
            let lower_end = a + Vec3::new(0.0, s.leg_radius * 0.6, 0.0);
            mesh.merge(&capsule(k, lower_end, s.leg_radius * 0.85, rings, segs));
            mesh.merge(&capsule(a, a + Vec3::new(0.0, 0.0, s.foot_length), s.foot_radius, rings, segs));
        }
        let skinned = SkinnedMesh::new(mesh, skel, DEFAULT_TEMPERATURE)?;
        Ok(Quadruped { spec: spec.clone(), skinned })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.skinned.mesh()
    }

    pub fn skeleton(&self) -> &Skeleton {
        self.skinned.skeleton()
    }

    pub fn stand_height(&self) -> f64 {
        self.spec.stand_height()
    }

    pub fn limb_points(&self, count: usize) -> Result<PointCloud, DataError> {
        Ok(self.skinned.limb_points(count)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_quadruped_has_sixteen_joints_and_foot_limbs() {
        let q = Quadruped::build(&QuadrupedSpec::default()).unwrap();
        assert_eq!(q.skeleton().num_joints(), NUM_JOINTS);
        assert_eq!(q.skeleton().limb_bones(), &[7, 10, 13, 16]);
        let soles = q.mesh().vertices().iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        assert!((soles + q.stand_height()).abs() < 1e-12);
        // limb points are the lowest part of the body
        let limb = q.limb_points(256).unwrap();
        assert_eq!(limb.len(), 256);
        let above_sole: Vec<f64> = limb.points().iter().map(|p| p.y + q.stand_height()).collect();
        assert!(above_sole.iter().all(|&h| h >= -1e-12 && h < 0.04), "{above_sole:?}");
        // every foot contributes
        for leg in 0..NUM_LEGS {
            let a = q.skeleton().rest_joints()[ankle(leg)];
            assert!(limb.points().iter().any(|p| (p.x - a.x).abs() < 0.02 && (p.z - a.z).abs() < 0.05));
        }
    }

    #[test]
    fn every_capsule_is_closed() {
        let q = Quadruped::build(&QuadrupedSpec::default()).unwrap();
        let mut edges = std::collections::HashMap::new();
        for f in q.mesh().faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&n| n == 2));
    }
}
