//! Rotation representations, pose arithmetic and pose-error metrics.
//!
//! Euler convention: `R = R_z(inplane) · R_x(elevation) · R_y(azimuth)`, all
//! right-handed active rotations. The same order is used by the generator,
//! the metrics and every policy. Quaternions are kept in canonical sign
//! (`w ≥ 0`; when `w == 0` the first nonzero component is positive) so that
//! a quaternion difference is zero exactly when two rotations coincide.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Wrap an angle to `(-π, π]`. Non-finite input is rejected.
pub fn wrap_angle(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite angle {x}")));
    }
    Ok(wrap(x))
}

pub(crate) fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub inplane: f64,
}

impl EulerPose {
    /// Build a pose with every component wrapped to `(-π, π]`.
    ///
    /// Panics on non-finite input; use [`EulerPose::try_new`] for untrusted
    /// values.
    pub fn new(azimuth: f64, elevation: f64, inplane: f64) -> Self {
        Self::try_new(azimuth, elevation, inplane).expect("finite Euler angles")
    }

    pub fn try_new(azimuth: f64, elevation: f64, inplane: f64) -> Result<Self> {
        Ok(Self {
            azimuth: wrap_angle(azimuth)?,
            elevation: wrap_angle(elevation)?,
            inplane: wrap_angle(inplane)?,
        })
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> Vec3 {
        [self.azimuth, self.elevation, self.inplane]
    }

    pub fn from_array(a: Vec3) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Component-wise wrapped difference `self − other`.
    pub fn wrapped_sub(self, other: EulerPose) -> EulerPose {
        EulerPose::new(
            self.azimuth - other.azimuth,
            self.elevation - other.elevation,
            self.inplane - other.inplane,
        )
    }
}

/// Image-plane shift (fractions of width/height) and log-scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Translation {
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

impl Translation {
    pub const SHIFT_LIMIT: f64 = 0.5;
    pub const SCALE_LIMIT: f64 = 1.0;

    /// Clamps `tx, ty` to `[-0.5, 0.5]` and `scale` to `[-1, 1]`.
    pub fn new(tx: f64, ty: f64, scale: f64) -> Self {
        Self {
            tx: tx.clamp(-Self::SHIFT_LIMIT, Self::SHIFT_LIMIT),
            ty: ty.clamp(-Self::SHIFT_LIMIT, Self::SHIFT_LIMIT),
            scale: scale.clamp(-Self::SCALE_LIMIT, Self::SCALE_LIMIT),
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> Vec3 {
        [self.tx, self.ty, self.scale]
    }

    pub fn from_array(a: Vec3) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalized, canonical-sign quaternion. Panics on a zero vector.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n > 0.0, "zero quaternion");
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical()
    }

    /// Rotation by `angle` about a unit `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn canonical(self) -> Self {
        let first_nonzero = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .unwrap_or(0.0);
        if first_nonzero < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    /// Hamilton product `self · rhs`, canonicalized.
    pub fn mul(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self, rhs);
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_matrix(self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = self;
        RotationMatrix([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    /// Squared Euclidean distance between component vectors.
    pub fn dist_sq(self, other: Quaternion) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum()
    }
}

/// Row-major 3×3 rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `angle` about unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        Quaternion::from_axis_angle(axis, angle).to_matrix()
    }

    pub fn mul(&self, rhs: &RotationMatrix) -> RotationMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        RotationMatrix(out)
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn frobenius_distance(&self, other: &RotationMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.0[i][j] - other.0[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    /// `‖MᵀM − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        self.transpose().mul(self).frobenius_distance(&RotationMatrix::identity())
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

pub fn euler_to_matrix(p: EulerPose) -> RotationMatrix {
    RotationMatrix::rot_z(p.inplane)
        .mul(&RotationMatrix::rot_x(p.elevation))
        .mul(&RotationMatrix::rot_y(p.azimuth))
}

pub fn euler_to_quaternion(p: EulerPose) -> Quaternion {
    let qz = Quaternion::from_axis_angle([0.0, 0.0, 1.0], p.inplane);
    let qx = Quaternion::from_axis_angle([1.0, 0.0, 0.0], p.elevation);
    let qy = Quaternion::from_axis_angle([0.0, 1.0, 0.0], p.azimuth);
    qz.mul(qx).mul(qy)
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Geodesic angle `arccos((tr(a·bᵀ) − 1)/2)` in `[0, π]`.
///
/// For rotations `tr(a·bᵀ) = 3 − ‖a − b‖²_F / 2`, and the cosine is formed
/// from the Frobenius distance: identical inputs give exactly zero and
/// swapping the arguments is bit-identical.
pub fn rotation_error(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let mut d2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = a.0[i][j] - b.0[i][j];
            d2 += d * d;
        }
    }
    clamp_unit(1.0 - d2 / 4.0).acos()
}

/// Angle between the symmetry axis as carried by `a` and by `b`; spin about
/// the axis is not penalized.
pub fn symmetric_rotation_error(a: &RotationMatrix, b: &RotationMatrix, axis: Vec3) -> f64 {
    let ua = a.apply(axis);
    let ub = b.apply(axis);
    clamp_unit(ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]).acos()
}

pub fn translation_error(a: &Translation, b: &Translation) -> f64 {
    let d = [a.tx - b.tx, a.ty - b.ty, a.scale - b.scale];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Quaternion of the wrapped component-wise Euler difference `goal − current`.
pub fn quat_residual(goal: EulerPose, current: EulerPose) -> Quaternion {
    euler_to_quaternion(goal.wrapped_sub(current))
}
