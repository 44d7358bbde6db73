//! Rigid-body primitives shared by every stage of the pipeline.
//!
//! Frame convention for cameras and grippers: `+z` is the optical and
//! approach axis, `+x` points to image right and `+y` to image down.
//! Poses are camera/gripper-to-world.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Below this geodesic angle slerp falls back to normalized lerp.
pub const SLERP_LINEAR_THRESHOLD: f64 = 1e-7;

/// Minimum eye-to-target distance accepted by [`look_at`].
pub const LOOK_AT_MIN_DISTANCE: f64 = 1e-9;

/// Collinearity tolerance between forward direction and up hint.
pub const LOOK_AT_COLLINEAR_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate look-at: {0}")]
    DegenerateLookAt(&'static str),
    #[error("pose array contains non-finite values")]
    NonFinitePose,
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalize()
    }

    /// Raw constructor, no normalization.
    pub const fn from_raw(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Quat::new(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// Exponential map from a rotation vector (axis * angle, radians).
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let theta = v.norm();
        let half = 0.5 * theta;
        let k = if theta < 1e-8 {
            // sin(θ/2)/θ series
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Quat::new(half.cos(), k * v.x, k * v.y, k * v.z)
    }

    /// Logarithm map: rotation vector with angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.canonical();
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            // angle/s -> 2/w as s -> 0
            return v * (2.0 / q.w);
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Quat::from_raw(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Self {
        Quat::from_raw(-self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    /// Hamilton product `self * o`, not renormalized.
    pub fn mul_raw(&self, o: &Quat) -> Self {
        Quat::from_raw(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Hamilton product, renormalized.
    pub fn mul(&self, o: &Quat) -> Self {
        self.mul_raw(o).normalize()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w(u x v) + 2 u x (u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method), canonical sign.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::from_raw(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::from_raw(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::from_raw(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::from_raw(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalize().canonical()
    }

    /// Geodesic angle between the rotations, in `[0, π]`.
    pub fn angle_to(&self, o: &Quat) -> f64 {
        let d = self.conjugate().mul_raw(o);
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Spherical linear interpolation along the shortest geodesic.
///
/// Endpoints are returned bit-exactly. `b` is negated internally when
/// `dot(a, b) < 0`, so `slerp(a, -b, t)` and `slerp(a, b, t)` describe the
/// same rotation.
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t <= 0.0 {
        return *a;
    }
    if t >= 1.0 {
        return *b;
    }
    let mut d = a.dot(b);
    let mut b2 = *b;
    if d < 0.0 {
        d = -d;
        b2 = b.neg();
    }
    let d = d.min(1.0);
    // half of the rotation angle between a and b
    let omega = d.acos();
    if 2.0 * omega < SLERP_LINEAR_THRESHOLD {
        return Quat::new(
            a.w + t * (b2.w - a.w),
            a.x + t * (b2.x - a.x),
            a.y + t * (b2.y - a.y),
            a.z + t * (b2.z - a.z),
        );
    }
    let s = omega.sin();
    let ka = ((1.0 - t) * omega).sin() / s;
    let kb = (t * omega).sin() / s;
    Quat::new(
        ka * a.w + kb * b2.w,
        ka * a.x + kb * b2.x,
        ka * a.y + kb * b2.y,
        ka * a.z + kb * b2.z,
    )
}

pub fn lerp(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    a + t * (b - a)
}

/// Orientation whose `+z` axis points from `eye` to `target`, with image-down
/// `+y` chosen opposite to `up_hint`.
pub fn look_at(eye: &Vec3, target: &Vec3, up_hint: &Vec3) -> Result<Quat, GeometryError> {
    let fwd = target - eye;
    let dist = fwd.norm();
    if !(dist > LOOK_AT_MIN_DISTANCE) {
        return Err(GeometryError::DegenerateLookAt("target coincides with eye"));
    }
    let z = fwd / dist;
    let up_n = up_hint.norm();
    if !(up_n > 0.0) {
        return Err(GeometryError::DegenerateLookAt("zero up hint"));
    }
    let xr = z.cross(&(up_hint / up_n));
    let xn = xr.norm();
    if xn < LOOK_AT_COLLINEAR_TOL {
        return Err(GeometryError::DegenerateLookAt(
            "forward direction collinear with up hint",
        ));
    }
    let x = xr / xn;
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(Quat::from_matrix(&m))
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 7]", into = "[f64; 7]")]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for Pose {
    type Error = GeometryError;

    fn try_from(a: [f64; 7]) -> Result<Self, Self::Error> {
        Pose::from_array(&a)
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Pose {
            rotation: rotation.normalize(),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            rotation: Quat::IDENTITY,
            translation: t,
        }
    }

    pub fn from_rotation(q: Quat) -> Self {
        Pose::new(q, Vec3::zeros())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.conjugate();
        Pose {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Expresses a world point in this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(&(p - self.translation))
    }

    pub fn x_axis(&self) -> Vec3 {
        self.rotation.rotate(&Vec3::x())
    }

    pub fn y_axis(&self) -> Vec3 {
        self.rotation.rotate(&Vec3::y())
    }

    pub fn z_axis(&self) -> Vec3 {
        self.rotation.rotate(&Vec3::z())
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t.x, t.y, t.z]
    }

    pub fn from_array(a: &[f64; 7]) -> Result<Pose, GeometryError> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        Ok(Pose {
            rotation: Quat::new(a[0], a[1], a[2], a[3]),
            translation: Vec3::new(a[4], a[5], a[6]),
        })
    }

    /// Rotation angle and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (
            self.rotation.angle_to(&other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

/// Per-step motion label expressed in the current gripper frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeltaAction {
    /// meters
    pub translation: Vec3,
    /// axis-angle, radians, angle in `[0, π]`
    pub rotation: Vec3,
}

impl DeltaAction {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The relative pose this action describes.
    pub fn exp(&self) -> Pose {
        Pose {
            rotation: Quat::from_rotation_vector(&self.rotation),
            translation: self.translation,
        }
    }
}

/// `inverse(current) ∘ next`, split into translation and rotation vector.
pub fn relative_action(current: &Pose, next: &Pose) -> DeltaAction {
    let d = current.inverse().compose(next);
    DeltaAction {
        translation: d.translation,
        rotation: d.rotation.to_rotation_vector(),
    }
}

/// Applies an action in the current gripper frame.
pub fn apply_action(current: &Pose, action: &DeltaAction) -> Pose {
    current.compose(&action.exp())
}
