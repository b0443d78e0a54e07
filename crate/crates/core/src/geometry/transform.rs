use serde::{Deserialize, Serialize};

use super::{PointCloud, Quat, UnitQuat, Vec3};

/// Rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: UnitQuat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform::new(UnitQuat::IDENTITY, t)
    }

    pub fn from_rotation(r: UnitQuat) -> Self {
        RigidTransform::new(r, Vec3::ZERO)
    }

    /// Rotation `r` about the point `pivot`.
    pub fn rotation_about(r: UnitQuat, pivot: Vec3) -> Self {
        RigidTransform::new(r, pivot - r.rotate(pivot))
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -inv.rotate(self.translation),
        }
    }

    /// Transform `d` with `self.compose(&d) == *other`.
    pub fn relative_to(&self, other: &RigidTransform) -> RigidTransform {
        self.inverse().compose(other)
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]` with the quaternion in the `w >= 0` hemisphere.
    pub fn to_array7(&self) -> [f64; 7] {
        let q = self.rotation.canonical().quat();
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t.x, t.y, t.z]
    }

    /// Inverse of [`to_array7`](Self::to_array7); the quaternion is renormalized.
    pub fn from_array7(a: [f64; 7]) -> Option<RigidTransform> {
        let q = UnitQuat::try_from_quat(Quat::new(a[0], a[1], a[2], a[3]))?;
        let t = Vec3::new(a[4], a[5], a[6]);
        t.is_finite().then_some(RigidTransform::new(q, t))
    }

    /// As [`from_array7`](Self::from_array7) but keeps the stored values
    /// exactly; `None` unless the quaternion is already unit within 1e-9.
    pub fn from_array7_exact(a: [f64; 7]) -> Option<RigidTransform> {
        let q = UnitQuat::try_exact(Quat::new(a[0], a[1], a[2], a[3]), 1e-9)?;
        let t = Vec3::new(a[4], a[5], a[6]);
        t.is_finite().then_some(RigidTransform::new(q, t))
    }

    /// Canonical hemisphere for the rotation part.
    pub fn canonical(&self) -> RigidTransform {
        RigidTransform::new(self.rotation.canonical(), self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.quat().is_finite() && self.translation.is_finite()
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Relative motion `d` such that `compose(a, d) == b`.
pub fn relative(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.relative_to(b)
}

pub fn apply_points(p: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud::from_points_unchecked(cloud.points().iter().map(|&x| p.apply(x)).collect())
}

/// Unit dual quaternion `real + ε dual` encoding a rigid motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualQuat {
    pub real: UnitQuat,
    pub dual: Quat,
}

impl DualQuat {
    pub fn from_rigid(t: &RigidTransform) -> DualQuat {
        let real = t.rotation;
        let dual = (Quat::from_vector(t.translation) * real.quat()).scale(0.5);
        DualQuat { real, dual }
    }

    pub fn to_rigid(&self) -> RigidTransform {
        let t = (self.dual * self.real.quat().conjugate()).scale(2.0);
        RigidTransform::new(self.real, t.vector())
    }

    /// Normalizes a raw (real, dual) pair so the real part has unit norm and
    /// the dual part is orthogonal to it. `None` when the real part vanishes.
    pub fn normalize(real: Quat, dual: Quat, min_norm: f64) -> Option<DualQuat> {
        let n = real.norm();
        if !(n >= min_norm) {
            return None;
        }
        let r = real.scale(1.0 / n);
        let d = dual.scale(1.0 / n);
        // project out the component of the dual part along the real part
        let d = d + r.scale(-r.dot(d));
        Some(DualQuat { real: UnitQuat::from_quat(r), dual: d })
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.to_rigid().apply(p)
    }
}
