use std::ops::{Add, Mul, Neg};

use serde::{Deserialize, Serialize};

use super::Vec3;

/// Unconstrained quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const ZERO: Quat = Quat { w: 0.0, x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    #[inline]
    pub fn from_vector(v: Vec3) -> Self {
        Quat::new(0.0, v.x, v.y, v.z)
    }

    #[inline]
    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Mul for Quat {
    type Output = Quat;
    /// Hamilton product.
    #[inline]
    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Add for Quat {
    type Output = Quat;
    #[inline]
    fn add(self, b: Quat) -> Quat {
        Quat::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Neg for Quat {
    type Output = Quat;
    #[inline]
    fn neg(self) -> Quat {
        self.scale(-1.0)
    }
}

/// Rotation stored as a unit quaternion. Every constructor renormalizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct UnitQuat(Quat);

impl Default for UnitQuat {
    fn default() -> Self {
        UnitQuat::IDENTITY
    }
}

impl From<UnitQuat> for [f64; 4] {
    fn from(q: UnitQuat) -> Self {
        q.canonical().0.to_array()
    }
}

impl TryFrom<[f64; 4]> for UnitQuat {
    type Error = String;
    fn try_from(a: [f64; 4]) -> Result<Self, String> {
        UnitQuat::try_from_quat(Quat::from_array(a))
            .ok_or_else(|| format!("quaternion {a:?} cannot be normalized"))
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat(Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 });

    /// Normalizes `q`; `None` if it is zero or non-finite.
    pub fn try_from_quat(q: Quat) -> Option<UnitQuat> {
        let n = q.norm();
        if n > 1e-300 && n.is_finite() {
            Some(UnitQuat(q.scale(1.0 / n)))
        } else {
            None
        }
    }

    /// Keeps `q` bit-for-bit when its norm is within `tol` of one.
    pub fn try_exact(q: Quat, tol: f64) -> Option<UnitQuat> {
        ((q.norm() - 1.0).abs() <= tol).then_some(UnitQuat(q))
    }

    /// Normalizes `q`, falling back to identity for a zero quaternion.
    pub fn from_quat(q: Quat) -> UnitQuat {
        UnitQuat::try_from_quat(q).unwrap_or(UnitQuat::IDENTITY)
    }

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> UnitQuat {
        UnitQuat::from_quat(Quat::new(w, x, y, z))
    }

    /// Rotation by `|v|` radians about `v / |v|`.
    pub fn from_axis_angle(v: Vec3) -> UnitQuat {
        let angle = v.norm();
        if angle < 1e-300 {
            return UnitQuat::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        UnitQuat::from_quat(Quat::new(half.cos(), v.x * s, v.y * s, v.z * s))
    }

    pub fn from_axis_angle_parts(axis: Vec3, angle: f64) -> UnitQuat {
        match axis.try_normalize() {
            Some(a) => UnitQuat::from_axis_angle(a * angle),
            None => UnitQuat::IDENTITY,
        }
    }

    /// Rotation about +y (the vertical axis) by `angle` radians.
    pub fn from_yaw(angle: f64) -> UnitQuat {
        UnitQuat::from_axis_angle(Vec3::new(0.0, angle, 0.0))
    }

    /// Shortest-arc rotation taking direction `from` onto direction `to`.
    pub fn rotation_between(from: Vec3, to: Vec3) -> UnitQuat {
        let (Some(a), Some(b)) = (from.try_normalize(), to.try_normalize()) else {
            return UnitQuat::IDENTITY;
        };
        let d = a.dot(b);
        if d < -1.0 + 1e-12 {
            // antiparallel: any perpendicular axis works
            let helper = if a.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
            let axis = a.cross(helper).try_normalize().unwrap_or(Vec3::Z);
            return UnitQuat::from_axis_angle(axis * std::f64::consts::PI);
        }
        let c = a.cross(b);
        UnitQuat::from_quat(Quat::new(1.0 + d, c.x, c.y, c.z))
    }

    #[inline]
    pub fn quat(self) -> Quat {
        self.0
    }

    #[inline]
    pub fn w(self) -> f64 {
        self.0.w
    }

    #[inline]
    pub fn inverse(self) -> UnitQuat {
        UnitQuat(self.0.conjugate())
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(self) -> UnitQuat {
        if self.0.w < 0.0 {
            UnitQuat(-self.0)
        } else {
            self
        }
    }

    #[inline]
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = self.0.vector();
        let t = u.cross(v) * 2.0;
        v + t * self.0.w + u.cross(t)
    }

    /// Row-major 3x3 rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = self.0;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Axis-angle vector with magnitude in `[0, pi]`.
    pub fn to_axis_angle(self) -> Vec3 {
        let q = self.canonical().0;
        let s = q.vector().norm();
        if s < 1e-300 {
            return Vec3::ZERO;
        }
        let angle = 2.0 * s.atan2(q.w);
        q.vector() * (angle / s)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(self) -> f64 {
        self.to_axis_angle().norm()
    }

    pub fn to_array(self) -> [f64; 4] {
        self.0.to_array()
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;
    /// Composition: `(a * b).rotate(v) == a.rotate(b.rotate(v))`.
    #[inline]
    fn mul(self, b: UnitQuat) -> UnitQuat {
        UnitQuat::from_quat(self.0 * b.0)
    }
}

/// Wraps an axis-angle vector so its magnitude is strictly below pi while
/// describing the same rotation.
pub fn wrap_axis_angle(v: Vec3) -> Vec3 {
    use std::f64::consts::PI;
    let angle = v.norm();
    if !(angle >= PI) {
        return v;
    }
    let axis = v / angle;
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a.abs() >= PI {
        // exactly pi: the equivalent rotation sits on the boundary; nudge inside
        a = a.signum() * (PI - 1e-12);
    }
    axis * a
}
