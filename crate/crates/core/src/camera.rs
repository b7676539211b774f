//! Pinhole cameras (OpenCV convention: +z forward, +x right, +y down).

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum supported image side in pixels.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > 1e-9 || rotation.determinant() < 0.0 {
            return Err(Error::Invalid(format!(
                "camera rotation is not a proper orthonormal matrix (error {err:.3e})"
            )));
        }
        if resolution.0 < MIN_RESOLUTION || resolution.1 < MIN_RESOLUTION {
            return Err(Error::Invalid(format!(
                "camera resolution {}x{} below {MIN_RESOLUTION}x{MIN_RESOLUTION}",
                resolution.0, resolution.1
            )));
        }
        if !(focal.0 > 0.0 && focal.1 > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        Ok(Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: resolution.0,
            height: resolution.1,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        focal: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::Invalid("look_at: up is parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Camera::new(
            rotation,
            translation,
            (focal, focal),
            (resolution.0 as f64 / 2.0, resolution.1 as f64 / 2.0),
            resolution,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn to_camera_frame(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn params(&self) -> CameraParams {
        let r = &self.rotation;
        CameraParams {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
            focal: [self.fx, self.fy],
            principal: [self.cx, self.cy],
            resolution: [self.width, self.height],
        }
    }
}

/// Serializable camera description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub resolution: [usize; 2],
}

impl TryFrom<&CameraParams> for Camera {
    type Error = Error;

    fn try_from(p: &CameraParams) -> Result<Camera> {
        let r = &p.rotation;
        Camera::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(p.translation),
            (p.focal[0], p.focal[1]),
            (p.principal[0], p.principal[1]),
            (p.resolution[0], p.resolution[1]),
        )
    }
}

/// Orbit rig around the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Orbit {
    pub count: usize,
    pub radius: f64,
    /// Elevation above the equator in degrees; alternates sign per view.
    pub elevation_deg: f64,
    /// Focal length as a multiple of image width.
    pub focal_scale: f64,
    pub resolution: [usize; 2],
    /// Azimuth offset in degrees applied to every view.
    pub azimuth_offset_deg: f64,
}

impl Default for Orbit {
    fn default() -> Self {
        Self {
            count: 8,
            radius: 3.5,
            elevation_deg: 20.0,
            focal_scale: 1.2,
            resolution: [64, 64],
            azimuth_offset_deg: 0.0,
        }
    }
}

impl Orbit {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        (0..self.count).map(|i| self.camera_at(i as f64 / self.count as f64, i)).collect()
    }

    /// Camera at orbit fraction `t` in `[0, 1)`; `parity` picks the elevation sign.
    pub fn camera_at(&self, t: f64, parity: usize) -> Result<Camera> {
        let az = (t * 360.0 + self.azimuth_offset_deg).to_radians();
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        let el = (sign * self.elevation_deg).to_radians();
        // World up is -y so that the camera's +y (down) matches screen rows.
        let eye = Point3::new(
            self.radius * el.cos() * az.sin(),
            -self.radius * el.sin(),
            -self.radius * el.cos() * az.cos(),
        );
        let res = (self.resolution[0], self.resolution[1]);
        Camera::look_at(
            eye,
            Point3::origin(),
            Vector3::new(0.0, -1.0, 0.0),
            self.focal_scale * res.0 as f64,
            res,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            Point3::new(1.0, 2.0, -3.0),
            Point3::origin(),
            Vector3::new(0.0, -1.0, 0.0),
            50.0,
            (32, 32),
        )
        .unwrap();
        let p = cam.to_camera_frame(&Vector3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 14f64.sqrt()).abs() < 1e-12);
        assert!((cam.center() - Vector3::new(1.0, 2.0, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_and_tiny() {
        let bad = Matrix3::identity() * 1.01;
        assert!(Camera::new(bad, Vector3::zeros(), (1.0, 1.0), (0.0, 0.0), (16, 16)).is_err());
        assert!(Camera::new(Matrix3::identity(), Vector3::zeros(), (1.0, 1.0), (0.0, 0.0), (4, 16)).is_err());
    }

    #[test]
    fn params_roundtrip() {
        let cams = Orbit::default().cameras().unwrap();
        for cam in cams {
            let back = Camera::try_from(&cam.params()).unwrap();
            assert_eq!(back, cam);
        }
    }
}
