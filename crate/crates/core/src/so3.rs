//! Rotation math shared by the model, the data generator and the losses.
//!
//! Euler angles follow the intrinsic Z-Y-X convention (yaw about z, then pitch
//! about the new y, then roll about the new x). With z pointing up, a positive
//! pitch tilts the forward axis (+x) downward.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Tolerance used when validating orthogonality and determinant of inputs.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Cap on `|d acos(x) / dx|` used by the training gradients.
pub const ACOS_GRAD_CAP: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("non-finite angle in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
}

/// Coupled 2-DoF eye orientation, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EyePose {
    pub yaw: f64,
    pub pitch: f64,
}

/// 3-DoF head orientation, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EyePose {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.yaw, self.pitch]
    }
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

/// Anything that can be read as a (yaw, pitch, roll) triple.
///
/// Eye poses are promoted with a zero roll.
pub trait EulerPose: Copy {
    const KIND: &'static str;

    fn angles(&self) -> [f64; 3];

    /// Componentwise sum with an increment of the same kind, without wrapping.
    fn add_raw(&self, delta: &Self) -> Self;

    fn map(&self, f: impl Fn(f64) -> f64) -> Self;
}

impl EulerPose for EyePose {
    const KIND: &'static str = "eye pose";

    fn angles(&self) -> [f64; 3] {
        [self.yaw, self.pitch, 0.0]
    }

    fn add_raw(&self, delta: &Self) -> Self {
        EyePose::new(self.yaw + delta.yaw, self.pitch + delta.pitch)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        EyePose::new(f(self.yaw), f(self.pitch))
    }
}

impl EulerPose for HeadPose {
    const KIND: &'static str = "head pose";

    fn angles(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    fn add_raw(&self, delta: &Self) -> Self {
        HeadPose::new(
            self.yaw + delta.yaw,
            self.pitch + delta.pitch,
            self.roll + delta.roll,
        )
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        HeadPose::new(f(self.yaw), f(self.pitch), f(self.roll))
    }
}

/// A validated element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks orthogonality and unit determinant within `ROTATION_TOLERANCE`.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self, DomainError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NotRotation("non-finite entry".into()));
        }
        let err = (m * m.transpose() - Matrix3::identity()).amax();
        if err > ROTATION_TOLERANCE {
            return Err(DomainError::NotRotation(format!(
                "R*R^T deviates from identity by {err:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(DomainError::NotRotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    /// Rodrigues formula. `axis` need not be normalized but must be non-zero.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let u = axis.normalize();
        let k = u.cross_matrix();
        Self(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// Z-Y-X matrix from raw angles; no validation.
pub fn matrix_from_angles(angles: [f64; 3]) -> Matrix3<f64> {
    rot_z(angles[0]) * rot_y(angles[1]) * rot_x(angles[2])
}

pub fn euler_to_matrix<P: EulerPose>(pose: &P) -> Result<RotationMatrix, DomainError> {
    let angles = pose.angles();
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(DomainError::NonFinite(P::KIND));
    }
    Ok(RotationMatrix(matrix_from_angles(angles)))
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}

/// `current + delta`, wrapped componentwise into (-pi, pi].
pub fn compose_target_pose<P: EulerPose>(current: &P, delta: &P) -> Result<P, DomainError> {
    let sum = current.add_raw(delta);
    if sum.angles().iter().any(|a| !a.is_finite()) {
        return Err(DomainError::NonFinite(P::KIND));
    }
    Ok(sum.map(wrap_angle))
}

fn acos_argument(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    // tr(R1 R2^T) is the Frobenius inner product of R1 and R2.
    (r1.dot(r2) - 1.0) / 2.0
}

/// Angle of the relative rotation `R1 R2^T`, in [0, pi].
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    geodesic_distance_raw(&r1.0, &r2.0)
}

/// Same as [`geodesic_distance`] but validates arbitrary matrices first.
pub fn geodesic_distance_checked(
    r1: &Matrix3<f64>,
    r2: &Matrix3<f64>,
) -> Result<f64, DomainError> {
    let a = RotationMatrix::try_from_matrix(*r1)?;
    let b = RotationMatrix::try_from_matrix(*r2)?;
    Ok(geodesic_distance(&a, &b))
}

/// `arccos((tr(R1 R2^T) - 1) / 2)`, evaluated as `atan2(sin, cos)` of the
/// relative rotation so that it stays accurate near 0 and pi, where the plain
/// arccos loses about half of the significant digits.
pub(crate) fn geodesic_distance_raw(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let m = r1 * r2.transpose();
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (0.5 * skew.norm()).atan2(acos_argument(r1, r2))
}

/// Geodesic distance between `R(angles)` and a fixed `target`, together with
/// its gradient with respect to the three Euler angles.
///
/// The arccos derivative is capped at [`ACOS_GRAD_CAP`] so the gradient stays
/// finite when the two rotations (nearly) coincide.
pub fn geodesic_with_euler_grad(angles: [f64; 3], target: &Matrix3<f64>) -> (f64, [f64; 3]) {
    let (rz, ry, rx) = (rot_z(angles[0]), rot_y(angles[1]), rot_x(angles[2]));
    let r = rz * ry * rx;
    let x = acos_argument(&r, target);
    let d = geodesic_distance_raw(&r, target);
    let slope = {
        let s = 1.0 - x * x;
        if s <= 0.0 {
            ACOS_GRAD_CAP
        } else {
            (1.0 / s.sqrt()).min(ACOS_GRAD_CAP)
        }
    };
    let partials = [
        d_rot_z(angles[0]) * ry * rx,
        rz * d_rot_y(angles[1]) * rx,
        rz * ry * d_rot_x(angles[2]),
    ];
    let grad = partials.map(|dr| -slope * 0.5 * dr.dot(target));
    (d, grad)
}

/// Yaw and pitch (up positive) of a direction vector in the base frame.
pub fn direction_angles(v: &Vector3<f64>) -> (f64, f64) {
    (v.y.atan2(v.x), v.z.atan2(v.x.hypot(v.y)))
}
