use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::{Mat3, Vec3};
use crate::scalar::Real;

/// Pinhole camera with a rigid world-to-camera pose (x right, y down, z forward).
///
/// Pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub id: u32,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Mat3<T>,
        translation: Vec3<T>,
    ) -> Result<Self> {
        let cam = Self {
            id,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return invalid(format!("camera {}: focal lengths must be positive", self.id));
        }
        let (w, h) = (T::from_usize_lossy(self.width), T::from_usize_lossy(self.height));
        if !(self.cx >= T::zero() && self.cx <= w && self.cy >= T::zero() && self.cy <= h) {
            return invalid(format!("camera {}: principal point outside image", self.id));
        }
        if self.width == 0 || self.height == 0 {
            return invalid(format!("camera {}: empty image", self.id));
        }
        let tol = T::lit(1e-4);
        if self.rotation.orthonormality_error() > tol
            || (self.rotation.determinant() - T::one()).abs() > tol
        {
            return invalid(format!("camera {}: rotation is not a proper rotation", self.id));
        }
        if !self.translation.is_finite() {
            return invalid(format!("camera {}: non-finite translation", self.id));
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    #[inline]
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    /// Pixel coordinates and camera-space depth of a world point (no culling).
    #[inline]
    pub fn project(&self, p: Vec3<T>) -> (T, T, T) {
        let c = self.world_to_camera(p);
        (
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
            c.z,
        )
    }

    /// World point at depth `depth` along the ray through pixel coordinates `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: T, v: T, depth: T) -> Vec3<T> {
        let c = Vec3::new(
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        );
        self.camera_to_world(c)
    }

    /// Row-major flattened 4×4 extrinsic matrix.
    pub fn extrinsic_4x4(&self) -> [T; 16] {
        let r = &self.rotation.m;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1],
            r[2][2], t.z, z, z, z, o,
        ]
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        Camera {
            id: self.id,
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::look_at;

    #[test]
    fn validate_rejects_bad_intrinsics() {
        let r = Mat3::<f64>::identity();
        assert!(Camera::new(0, -1.0, 1.0, 4.0, 4.0, 8, 8, r, Vec3::zero()).is_err());
        assert!(Camera::new(0, 1.0, 1.0, 9.0, 4.0, 8, 8, r, Vec3::zero()).is_err());
        let mut bad = r;
        bad.m[0][0] = -1.0;
        assert!(Camera::new(0, 1.0, 1.0, 4.0, 4.0, 8, 8, bad, Vec3::zero()).is_err());
    }

    #[test]
    fn project_unproject_roundtrip() {
        let (r, t) = look_at(Vec3::new(2.0f64, -1.0, 3.0), Vec3::zero(), Vec3::new(0.0, -1.0, 0.0));
        let cam = Camera::new(1, 50.0, 55.0, 32.0, 30.0, 64, 60, r, t).unwrap();
        let p = Vec3::new(0.2, 0.1, -0.3);
        let (u, v, z) = cam.project(p);
        let back = cam.unproject(u, v, z);
        assert!((back - p).norm() < 1e-12);
        assert!((cam.center() - Vec3::new(2.0, -1.0, 3.0)).norm() < 1e-12);
    }
}
