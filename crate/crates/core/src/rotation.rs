//! Rotation algebra: skew matrices, unit-quaternion orientation and the
//! intrinsic Z-Y-X (yaw-pitch-roll) Euler convention.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::{Mat3, Vec3};

/// Pitch magnitude beyond which the Euler inverse map is considered singular.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("pitch {pitch:.6} rad is within {GIMBAL_LOCK_MARGIN} rad of gimbal lock")]
    GimbalLock { pitch: f64 },
    #[error("quaternion ({0}, {1}, {2}, {3}) cannot be normalized")]
    Degenerate(f64, f64, f64, f64),
}

/// Matrix form of the cross product, `skew(w) * a == w.cross(a)`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Roll, pitch and yaw in radians, composed as `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Body-to-world orientation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation(UnitQuaternion<f64>);

impl Default for Orientation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Orientation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    /// Builds an orientation from raw `(w, x, y, z)` coefficients, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RotationError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(RotationError::Degenerate(w, x, y, z));
        }
        Ok(Self(UnitQuaternion::new_unchecked(q / norm)))
    }

    pub fn from_euler(angles: EulerAngles) -> Self {
        Self(UnitQuaternion::from_euler_angles(
            angles.roll,
            angles.pitch,
            angles.yaw,
        ))
    }

    pub fn unit(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Coefficients in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.0.inverse_transform_vector(v)
    }

    /// Euler angles, failing near the pitch singularity.
    pub fn to_euler(&self) -> Result<EulerAngles, RotationError> {
        let e = self.euler_unchecked();
        if e.pitch.abs() > FRAC_PI_2 - GIMBAL_LOCK_MARGIN {
            return Err(RotationError::GimbalLock { pitch: e.pitch });
        }
        Ok(e)
    }

    /// Euler angles without the gimbal-lock check.
    pub fn euler_unchecked(&self) -> EulerAngles {
        let (roll, pitch, yaw) = self.0.euler_angles();
        EulerAngles { roll, pitch, yaw }
    }

    /// Heading of the body x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let x_b = self.0 * Vector3::x();
        x_b.y.atan2(x_b.x)
    }

    /// Re-normalizes the stored quaternion; call after integration.
    pub fn renormalized(&self) -> Self {
        Self(UnitQuaternion::new_normalize(*self.0.quaternion()))
    }

    pub fn norm_error(&self) -> f64 {
        (self.0.quaternion().norm() - 1.0).abs()
    }
}

pub fn euler_to_orientation(roll: f64, pitch: f64, yaw: f64) -> Orientation {
    Orientation::from_euler(EulerAngles { roll, pitch, yaw })
}

pub fn orientation_to_euler(q: &Orientation) -> Result<EulerAngles, RotationError> {
    q.to_euler()
}

/// Rotation from the heading-aligned intermediate frame to the world frame.
pub fn intermediate_frame_rotation(yaw: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner()
}

/// Pure pitch rotation about the y axis.
pub fn pitch_rotation(pitch: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::y_axis(), pitch).into_inner()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Removes jumps larger than pi from a sequence of angles.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut prev: Option<f64> = None;
    for &a in angles {
        let value = match prev {
            None => a,
            Some(p) => p + wrap_angle(a - p),
        };
        out.push(value);
        prev = Some(value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn skew_of_zero_is_zero() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_of_unit_z() {
        let s = skew(&Vec3::z());
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(s, expected);
    }

    #[test]
    fn skew_is_linear_and_antisymmetric() {
        let a = Vec3::new(0.3, -1.2, 2.0);
        let b = Vec3::new(-0.7, 0.4, 0.1);
        assert_relative_eq!(skew(&(a + b)), skew(&a) + skew(&b), epsilon = 1e-15);
        assert_relative_eq!(skew(&a).transpose(), -skew(&a), epsilon = 1e-15);
    }

    #[test]
    fn zero_euler_is_identity() {
        let q = euler_to_orientation(0.0, 0.0, 0.0);
        assert_relative_eq!(q.rotation_matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_yaw_maps_x_to_y() {
        let q = euler_to_orientation(0.0, 0.0, PI / 2.0);
        assert_relative_eq!(q.rotate(&Vec3::x()), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn euler_matches_explicit_zyx_product() {
        let (roll, pitch, yaw) = (0.3, -0.4, 2.1);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll).into_inner();
        let product = intermediate_frame_rotation(yaw) * pitch_rotation(pitch) * rx;
        let q = euler_to_orientation(roll, pitch, yaw);
        assert_relative_eq!(q.rotation_matrix(), product, epsilon = 1e-14);
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let q = euler_to_orientation(0.1, FRAC_PI_2 - 1e-4, 0.2);
        assert!(matches!(q.to_euler(), Err(RotationError::GimbalLock { .. })));
    }

    #[test]
    fn intermediate_frame_identity_and_half_turn() {
        assert_relative_eq!(intermediate_frame_rotation(0.0), Mat3::identity());
        let r = intermediate_frame_rotation(PI);
        assert_relative_eq!(r * Vec3::x(), -Vec3::x(), epsilon = 1e-15);
        assert_relative_eq!(r * Vec3::y(), -Vec3::y(), epsilon = 1e-15);
        assert_relative_eq!(r.column(2).into_owned(), Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_quaternion_rejected() {
        assert!(Orientation::from_wxyz(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Orientation::from_wxyz(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn unwrap_removes_branch_jumps() {
        let raw = [3.0, -3.0, -2.5, 3.1];
        let un = unwrap_angles(&raw);
        for w in un.windows(2) {
            assert!((w[1] - w[0]).abs() < PI);
        }
    }

    #[test]
    fn renormalization_bounds_drift_over_many_updates() {
        // Repeated first-order quaternion updates drift off the unit sphere
        // unless renormalized after each step.
        let w = Vec3::new(0.7, -1.3, 2.2);
        let dt = 1e-3;
        let mut q = Orientation::identity();
        for _ in 0..10_000 {
            let qq = q.unit().quaternion();
            let dq = qq * Quaternion::from_parts(0.0, w) * 0.5 * dt;
            let raw = qq + dq;
            q = Orientation::from_unit(UnitQuaternion::new_unchecked(raw)).renormalized();
            assert!(q.norm_error() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn skew_matches_cross_product(
            w in prop::array::uniform3(-10.0f64..10.0),
            a in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let w = Vec3::from(w);
            let a = Vec3::from(a);
            let cross = Vec3::new(
                w.y * a.z - w.z * a.y,
                w.z * a.x - w.x * a.z,
                w.x * a.y - w.y * a.x,
            );
            prop_assert!((skew(&w) * a - cross).norm() < 1e-12);
        }

        #[test]
        fn euler_round_trip(
            roll in -3.1f64..3.1,
            pitch in -1.5f64..1.5,
            yaw in -3.1f64..3.1,
        ) {
            let q = euler_to_orientation(roll, pitch, yaw);
            let e = orientation_to_euler(&q).unwrap();
            prop_assert!((e.roll - roll).abs() < 1e-9);
            prop_assert!((e.pitch - pitch).abs() < 1e-9);
            prop_assert!((e.yaw - yaw).abs() < 1e-9);
            let r = q.rotation_matrix();
            prop_assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn intermediate_frame_is_pure_yaw(yaw in -10.0f64..10.0) {
            let r = intermediate_frame_rotation(yaw);
            let q = euler_to_orientation(0.0, 0.0, yaw);
            prop_assert!((r - q.rotation_matrix()).norm() < 1e-12);
            prop_assert!((r.column(2) - Vec3::z()).norm() < 1e-15);
            let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
            prop_assert!((r.transpose() * heading - Vec3::x()).norm() < 1e-12);
        }
    }
}
