//! Rotation representations used across the pipeline: 3x3 rotation matrices,
//! the continuous 6D encoding (first two matrix columns), and small vector math.
//!
//! Conventions fixed here because serialized datasets and checkpoints depend
//! on them:
//! - `RotMat` is row-major.
//! - `Rot6D` is the first two *columns* of the matrix, column-major, i.e.
//!   `[m00, m10, m20, m01, m11, m21]`.
//! - Decoding a 6D value always re-orthonormalizes via Gram-Schmidt.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RotError {
    /// 6D input whose implied columns are (near-)zero or (near-)parallel.
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateInput(&'static str),
}

/// A 3-vector. Units are contextual (meters, m/s, m/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const ZERO3: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self * (1.0 / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat {
    pub m: [f64; 9],
}

/// First two columns of a rotation matrix, stored column-major.
///
/// Raw network outputs live here; no orthonormality is guaranteed until the
/// value is decoded through [`matrix_from_rot6d`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rot6D {
    pub r: [f64; 6],
}

pub const IDENTITY: RotMat = RotMat { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] };

/// 6D encoding of the identity rotation.
pub const IDENTITY_6D: Rot6D = Rot6D { r: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] };

impl Default for RotMat {
    fn default() -> Self {
        IDENTITY
    }
}

impl RotMat {
    pub fn from_rows(r0: [f64; 3], r1: [f64; 3], r2: [f64; 3]) -> Self {
        Self { m: [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]] }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self { m: [c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z] }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[j], self.m[3 + j], self.m[6 + j])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::new(self.m[3 * i], self.m[3 * i + 1], self.m[3 * i + 2])
    }

    pub fn transpose(&self) -> RotMat {
        let m = &self.m;
        RotMat { m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]] }
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[4] + self.m[8]
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// R^T v without materializing the transpose.
    pub fn apply_transpose(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v))
    }

    /// Rotation about the x axis; `deg` in degrees.
    pub fn rot_x(deg: f64) -> RotMat {
        let (s, c) = deg.to_radians().sin_cos();
        RotMat::from_rows([1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c])
    }

    pub fn rot_y(deg: f64) -> RotMat {
        let (s, c) = deg.to_radians().sin_cos();
        RotMat::from_rows([c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c])
    }

    pub fn rot_z(deg: f64) -> RotMat {
        let (s, c) = deg.to_radians().sin_cos();
        RotMat::from_rows([c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0])
    }

    /// Rotation by an axis-angle vector (angle = |v| radians).
    pub fn from_rotvec(v: Vec3) -> RotMat {
        let angle = v.norm();
        if angle < 1e-12 {
            return IDENTITY;
        }
        let a = v * (1.0 / angle);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        RotMat::from_rows(
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        )
    }

    /// Max deviation from orthonormality / unit determinant.
    pub fn orthonormal_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.col(i).dot(self.col(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        let det = self.col(0).dot(self.col(1).cross(self.col(2)));
        worst.max((det - 1.0).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }
}

impl Mul for RotMat {
    type Output = RotMat;
    fn mul(self, o: RotMat) -> RotMat {
        let mut m = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                m[3 * i + j] = self.row(i).dot(o.col(j));
            }
        }
        RotMat { m }
    }
}

/// Encode a rotation matrix as its first two columns.
pub fn rot6d_from_matrix(rot: &RotMat) -> Rot6D {
    let c0 = rot.col(0);
    let c1 = rot.col(1);
    Rot6D { r: [c0.x, c0.y, c0.z, c1.x, c1.y, c1.z] }
}

const DEGENERATE_EPS: f64 = 1e-8;

/// Decode a 6D value into a rotation matrix by Gram-Schmidt.
///
/// `c1 = normalize(a1)`, `c2 = normalize(a2 - (c1.a2) c1)`, `c3 = c1 x c2`.
pub fn matrix_from_rot6d(r: &Rot6D) -> Result<RotMat, RotError> {
    let a1 = Vec3::new(r.r[0], r.r[1], r.r[2]);
    let a2 = Vec3::new(r.r[3], r.r[4], r.r[5]);
    let n1 = a1.norm();
    if n1 < DEGENERATE_EPS {
        return Err(RotError::DegenerateInput("first column near zero"));
    }
    let c1 = a1 * (1.0 / n1);
    let u2 = a2 - c1 * c1.dot(a2);
    let n2 = u2.norm();
    if n2 < DEGENERATE_EPS {
        return Err(RotError::DegenerateInput("columns near parallel"));
    }
    let c2 = u2 * (1.0 / n2);
    let c3 = c1.cross(c2);
    Ok(RotMat::from_cols(c1, c2, c3))
}

/// Decode like [`matrix_from_rot6d`] but map degenerate inputs to identity.
///
/// Used where a raw network output must always yield a valid pose.
pub fn matrix_from_rot6d_or_identity(r: &Rot6D) -> RotMat {
    matrix_from_rot6d(r).unwrap_or(IDENTITY)
}

/// Geodesic distance between two rotations, in degrees, range [0, 180].
///
/// Small angles use the Frobenius form `|A - B|_F = 2 sqrt(2) sin(theta/2)`:
/// `acos` near 1 turns rounding (or f32-quantized inputs) into sqrt-scale
/// noise, while the difference norm stays exact at zero.
pub fn geodesic_angle(ra: &RotMat, rb: &RotMat) -> f64 {
    let mut rel_trace = 0.0;
    for i in 0..9 {
        rel_trace += ra.m[i] * rb.m[i];
    }
    let c = ((rel_trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    if c > 0.999 {
        let mut d2 = 0.0;
        for i in 0..9 {
            let d = ra.m[i] - rb.m[i];
            d2 += d * d;
        }
        let s = (d2.sqrt() / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
        (2.0 * s.asin()).to_degrees()
    } else {
        c.acos().to_degrees()
    }
}

/// Yaw of a rotation about the +Y (up) axis, radians.
///
/// Taken from the rotated +Z (forward) direction projected to the ground
/// plane; falls back to the rotated +X axis when forward points straight up
/// or down.
pub fn yaw_angle(r: &RotMat) -> f64 {
    let f = r.apply(Vec3::new(0.0, 0.0, 1.0));
    if f.x.hypot(f.z) > 1e-8 {
        f.x.atan2(f.z)
    } else {
        let rx = r.apply(Vec3::new(1.0, 0.0, 0.0));
        rx.x.atan2(rx.z) - std::f64::consts::FRAC_PI_2
    }
}

/// The pure-yaw part of a rotation; maps heading-frame vectors to world.
pub fn yaw_rotation(r: &RotMat) -> RotMat {
    RotMat::from_rotvec(Vec3::new(0.0, yaw_angle(r), 0.0))
}

/// Uniform random rotation (Shoemake's quaternion method).
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> RotMat {
    use std::f64::consts::PI;
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (w, x) = ((2.0 * PI * u2).cos() * a, (2.0 * PI * u2).sin() * a);
    let (y, z) = ((2.0 * PI * u3).cos() * b, (2.0 * PI * u3).sin() * b);
    // quaternion (w, x, y, z) -> matrix
    RotMat::from_rows(
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    )
}
