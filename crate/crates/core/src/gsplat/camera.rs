use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Mat3, Vec3};

/// Points closer than this to the image plane (camera-space depth, m) are
/// culled.
pub const NEAR_PLANE: f64 = 1e-3;

/// Pinhole camera. Camera space looks down `+z` with `+y` pointing down the
/// image, so pixel `u = fx·x/z + cx`, `v = fy·y/z + cy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// px
    pub fx: f64,
    /// px
    pub fy: f64,
    /// px
    pub cx: f64,
    /// px
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation (m).
    pub translation: Vec3,
}

impl Camera {
    /// Camera at `eye` looking at `target` with vertical field of view
    /// `fov_y` (radians) and the principal point at the image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::InvalidParameter("camera eye equals target".into()));
        }
        let z = forward.normalized();
        let right = z.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidParameter("camera up is parallel to view direction".into()));
        }
        let x = right.normalized();
        let y = z.cross(&x);
        let rotation = Mat3([x.0, y.0, z.0]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = Camera {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            translation: -(rotation * eye),
            rotation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        let rrt = self.rotation * self.rotation.transpose();
        if rrt.max_abs_diff(&Mat3::IDENTITY) > 1e-9 || self.rotation.determinant() <= 0.0 {
            return Err(Error::InvalidParameter("camera rotation is not a rotation".into()));
        }
        if !self.translation.is_finite() || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::NonFinite("camera".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, x: Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates and depth of a world point, or `None` if it lies
    /// behind the near plane.
    pub fn project(&self, x: Vec3) -> Option<([f64; 2], f64)> {
        let c = self.to_camera(x);
        if c[2] <= NEAR_PLANE {
            return None;
        }
        Some((
            [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy],
            c[2],
        ))
    }
}
