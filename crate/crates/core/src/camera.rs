//! Pinhole intrinsics and rigid poses.

use std::ops::Mul;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Pinhole camera; `x` right, `y` down, `z` forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image centre.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width - 1) as f64 / 2.0,
            cy: (height - 1) as f64 / 2.0,
            width,
            height,
        }
    }

    /// Projects a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Point at depth `z` along the ray through pixel `(u, v)`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Intrinsics of pyramid level `level` built by 2x2 averaging.
    pub fn at_level(&self, level: usize) -> Self {
        let s = 0.5f64.powi(level as i32);
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: (self.cx + 0.5) * s - 0.5,
            cy: (self.cy + 0.5) * s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        }
    }
}

/// Rigid transform in SE(3). Increments `xi = (v, w)` act on the left:
/// `retract(xi) = exp(xi) * self`, translation part first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3(Isometry3<f64>);

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    /// Validates that `rotation` is orthonormal within `1e-9` with `det = +1`.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) || !((rotation.determinant() - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidModel(format!(
                "rotation is not orthonormal (error {err:e}, det {})",
                rotation.determinant()
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite translation".into()));
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Ok(Self(Isometry3::from_parts(Translation3::from(translation), rot)))
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self(iso)
    }

    /// From a translation and a rotation vector (axis times angle).
    pub fn from_translation_axis_angle(t: Vector3<f64>, axis_angle: Vector3<f64>) -> Self {
        Self(Isometry3::new(t, axis_angle))
    }

    pub fn from_quaternion(t: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(t), q))
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.rotation.to_rotation_matrix().into_inner()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    #[inline]
    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.0 * p
    }

    /// `exp(xi) * self` with `xi = (v, w)`.
    pub fn retract(&self, xi: &Vector6<f64>) -> Self {
        let delta = Isometry3::new(xi.fixed_rows::<3>(0).into_owned(), xi.fixed_rows::<3>(3).into_owned());
        Self(delta * self.0)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.0.rotation.angle()
    }

    pub fn is_finite(&self) -> bool {
        self.translation().iter().all(|v| v.is_finite())
            && self.0.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        PoseSE3(self.0 * rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_backproject_round_trip() {
        let k = Intrinsics::centered(64, 48, 50.0);
        let p = k.backproject(10.25, 40.5, 2.5);
        let (u, v) = k.project(&p).unwrap();
        assert!((u - 10.25).abs() < 1e-12 && (v - 40.5).abs() < 1e-12);
        assert!(k.project(&Point3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn level_intrinsics_match_box_downsampling() {
        let k = Intrinsics::centered(64, 48, 50.0);
        let k1 = k.at_level(1);
        // Fine pixels 0 and 1 average into coarse pixel 0.
        assert!((k1.cx - ((k.cx + 0.5) / 2.0 - 0.5)).abs() < 1e-15);
        assert_eq!((k1.width, k1.height), (32, 24));
        let p = Point3::new(0.3, -0.2, 2.0);
        let (u0, _) = k.project(&p).unwrap();
        let (u1, _) = k1.project(&p).unwrap();
        assert!(((u0 + 0.5) / 2.0 - 0.5 - u1).abs() < 1e-12);
    }

    #[test]
    fn from_parts_validates_rotation() {
        let r = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        assert!(PoseSE3::from_parts(r, Vector3::new(1.0, 2.0, 3.0)).is_ok());
        let mut bad = r;
        bad[(0, 0)] += 1e-6;
        assert!(PoseSE3::from_parts(bad, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(PoseSE3::from_parts(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn retract_zero_is_identity_and_left_acting() {
        let pose = PoseSE3::from_translation_axis_angle(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.3, 0.0));
        assert_eq!(pose.retract(&Vector6::zeros()), pose);
        let xi = Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let moved = pose.retract(&xi);
        assert!((moved.translation() - (pose.translation() + Vector3::z())).norm() < 1e-15);
    }
}
