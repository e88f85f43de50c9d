//! Rigid-body transforms and their tangent-space coordinates.
//!
//! A [`Pose`] maps points from a body (camera/vehicle) frame into the world
//! frame: `p_world = R * p_body + t`. Tangent coordinates are 6-vectors laid
//! out rotation first (`[ω; ρ]`), where `ω` is an axis-angle vector and `ρ`
//! is the plain translation of the transform. `exp(ω, ρ) = (Exp(ω), ρ)`, so
//! the residual `log(T_ref⁻¹ · T)` measures the relative rotation angle and
//! the relative translation expressed in the reference frame.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is too close to pi for a stable logarithm")]
    DegenerateRotation { angle: f64 },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// Rigid-body transform of a body frame into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Scalar> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

/// Rotation and translation standard deviations used to size association
/// gates and to weight the odometry prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseNoise {
    /// radians
    pub sigma_theta: f64,
    /// meters
    pub sigma_t: f64,
}

impl PoseNoise {
    pub fn new(sigma_theta: f64, sigma_t: f64) -> Self {
        assert!(
            sigma_theta >= 0.0 && sigma_t >= 0.0,
            "pose noise must be nonnegative"
        );
        Self { sigma_theta, sigma_t }
    }

    pub fn zero() -> Self {
        Self { sigma_theta: 0.0, sigma_t: 0.0 }
    }
}

/// Tangent-space increment: `[ω (rad); ρ (m)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta<T: Scalar>(pub Vector6<T>);

impl<T: Scalar> PoseDelta<T> {
    pub fn new(rotation: Vector3<T>, translation: Vector3<T>) -> Self {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&translation);
        Self(v)
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn rotation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

impl<T: Scalar> Pose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Planar pose: translation `(x, y, z)` and rotation `yaw` about +Z.
    pub fn from_xyz_yaw(x: T, y: T, z: T, yaw: T) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Builds a pose from a `(w, x, y, z)` quaternion, normalizing it first.
    pub fn from_quaternion_wxyz(q: [T; 4], translation: Vector3<T>) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() <= T::default_epsilon() {
            return Err(GeometryError::ZeroQuaternion);
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self {
            rotation: unit.to_rotation_matrix().into_inner(),
            translation,
        })
    }

    /// Returns the rotation as a unit `(w, x, y, z)` quaternion with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [T; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        if q.w < T::zero() {
            [-q.w, -q.i, -q.j, -q.k]
        } else {
            [q.w, q.i, q.j, q.k]
        }
    }

    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `R·p + t`
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// Heading of the body X axis in the world XY plane.
    pub fn yaw(&self) -> T {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Right perturbation `T · exp(δ)`.
    pub fn retract(&self, delta: &PoseDelta<T>) -> Pose<T> {
        self.compose(&pose_exp(delta))
    }

    /// Frobenius distance of `RᵀR` from the identity, plus the determinant
    /// deviation from one.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.norm() + (self.rotation.determinant() - T::one()).abs()
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|x| lit::<U>(crate::scalar::to_f64(x))),
            translation: self.translation.map(|x| lit::<U>(crate::scalar::to_f64(x))),
        }
    }
}

impl<T: Scalar> Mul for Pose<T> {
    type Output = Pose<T>;
    fn mul(self, rhs: Pose<T>) -> Pose<T> {
        self.compose(&rhs)
    }
}

impl<'a, T: Scalar> Mul<&'a Pose<T>> for &'a Pose<T> {
    type Output = Pose<T>;
    fn mul(self, rhs: &'a Pose<T>) -> Pose<T> {
        self.compose(rhs)
    }
}

pub fn rot_z<T: Scalar>(yaw: T) -> Matrix3<T> {
    let (s, c) = (yaw.sin(), yaw.cos());
    Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one())
}

pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Rotation angle of `delta_r`, i.e. `arccos((tr(ΔR) - 1) / 2)` in `[0, π]`.
///
/// Evaluated as `atan2(‖vee(ΔR - ΔRᵀ)‖ / 2, (tr - 1) / 2)`, which is the same
/// angle but keeps full precision near zero where `arccos` flattens out.
pub fn rotation_angle<T: Scalar>(delta_r: &Matrix3<T>) -> T {
    let two = lit::<T>(2.0);
    let cos = ((delta_r.trace() - T::one()) / two).clamp(-T::one(), T::one());
    let axis = Vector3::new(
        delta_r[(2, 1)] - delta_r[(1, 2)],
        delta_r[(0, 2)] - delta_r[(2, 0)],
        delta_r[(1, 0)] - delta_r[(0, 1)],
    );
    let sin = axis.norm() / two;
    sin.atan2(cos)
}

pub fn translation_norm<T: Scalar>(delta_t: &Vector3<T>) -> T {
    delta_t.norm()
}

/// Rodrigues' formula.
pub fn so3_exp<T: Scalar>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta = omega.norm();
    let k = skew(omega);
    let k2 = k * k;
    if theta < lit(1e-8) {
        return Matrix3::identity() + k + k2 * lit::<T>(0.5);
    }
    let a = theta.sin() / theta;
    let b = (T::one() - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k2 * b
}

/// Largest rotation angle accepted by [`so3_log`].
pub const MAX_LOG_ANGLE: f64 = std::f64::consts::PI - 1e-6;

pub fn so3_log<T: Scalar>(r: &Matrix3<T>) -> Result<Vector3<T>, GeometryError> {
    let theta = rotation_angle(r);
    if theta > lit(MAX_LOG_ANGLE) {
        return Err(GeometryError::DegenerateRotation { angle: crate::scalar::to_f64(theta) });
    }
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < lit(1e-8) {
        return Ok(vee * lit::<T>(0.5));
    }
    Ok(vee * (theta / (lit::<T>(2.0) * theta.sin())))
}

/// Inverse of the SO(3) right Jacobian: `log(R·Exp(δ)) ≈ log(R) + Jr⁻¹(log R)·δ`.
pub fn so3_right_jacobian_inv<T: Scalar>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta = omega.norm();
    let k = skew(omega);
    let half = lit::<T>(0.5);
    if theta < lit(1e-6) {
        return Matrix3::identity() + k * half + k * k * lit::<T>(1.0 / 12.0);
    }
    let coeff = T::one() / (theta * theta)
        - (T::one() + theta.cos()) / (lit::<T>(2.0) * theta * theta.sin());
    Matrix3::identity() + k * half + k * k * coeff
}

/// Tangent coordinates of a pose; fails for rotation angles near π.
pub fn pose_log<T: Scalar>(pose: &Pose<T>) -> Result<PoseDelta<T>, GeometryError> {
    let omega = so3_log(&pose.rotation)?;
    Ok(PoseDelta::new(omega, pose.translation))
}

pub fn pose_exp<T: Scalar>(delta: &PoseDelta<T>) -> Pose<T> {
    Pose {
        rotation: so3_exp(&delta.rotation()),
        translation: delta.translation(),
    }
}

/// Relative-pose residual `log(reference⁻¹ · pose)`.
pub fn pose_between_log<T: Scalar>(
    reference: &Pose<T>,
    pose: &Pose<T>,
) -> Result<PoseDelta<T>, GeometryError> {
    pose_log(&reference.inverse().compose(pose))
}
