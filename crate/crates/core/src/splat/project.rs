//! Perspective projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::gaussian::{normalized, rotation_matrix, Gaussian, PARAM_COUNT};
use crate::camera::Camera;

pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space dilation added to every projected covariance, in px².
pub const COV_DILATION: f64 = 0.3;

/// A Gaussian projected into a camera.
#[derive(Clone, Debug)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    // Intermediates reused by the backward pass.
    cam_point: Vector3<f64>,
    jacobian: Matrix2x3<f64>,
    cov3d: Matrix3<f64>,
    rot: Matrix3<f64>,
    scales: Vector3<f64>,
    quat: [f64; 4],
    quat_norm: f64,
}

/// Projects `g`; returns `None` when the Gaussian is at or behind the near plane.
pub fn project(g: &Gaussian, cam: &Camera) -> Option<Projected> {
    let p = cam.to_camera_frame(&g.mean_vec());
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let quat_norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let quat = normalized(g.rotation);
    let rot = rotation_matrix(&quat);
    let scales = Vector3::from(g.scales());
    let m = rot * Matrix3::from_diagonal(&scales);
    let cov3d = m * m.transpose();

    let (x, y, z) = (p.x, p.y, p.z);
    let jacobian = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let t = jacobian * cam.rotation();
    let cov2d = t * cov3d * t.transpose() + Matrix2::identity() * COV_DILATION;
    let conic = cov2d.try_inverse()?;
    let mean2d = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    Some(Projected {
        mean2d,
        cov2d,
        conic,
        depth: z,
        cam_point: p,
        jacobian,
        cov3d,
        rot,
        scales,
        quat,
        quat_norm,
    })
}

impl Projected {
    /// Largest eigenvalue of the screen covariance.
    pub fn max_eigenvalue(&self) -> f64 {
        let a = self.cov2d[(0, 0)];
        let b = self.cov2d[(0, 1)];
        let c = self.cov2d[(1, 1)];
        let mid = 0.5 * (a + c);
        let det = a * c - b * b;
        mid + (mid * mid - det).max(0.0).sqrt()
    }

    /// Back-propagates screen-space gradients to the Gaussian's parameters.
    ///
    /// `d_mean2d` is dL/d(mean2d); `d_conic` is the gradient with respect to
    /// the full (symmetric) conic matrix entries.
    pub fn backward(
        &self,
        cam: &Camera,
        d_mean2d: Vector2<f64>,
        d_conic: Matrix2<f64>,
    ) -> [f64; PARAM_COUNT] {
        let w = cam.rotation();
        let (x, y, z) = (self.cam_point.x, self.cam_point.y, self.cam_point.z);
        let (fx, fy) = (cam.fx, cam.fy);

        // conic = cov2d^-1
        let d_cov2d = -(self.conic * d_conic * self.conic);
        let t = self.jacobian * w;
        let d_cov3d = t.transpose() * d_cov2d * t;
        let d_t = 2.0 * d_cov2d * t * self.cov3d;
        let d_j = d_t * w.transpose();

        let mut d_cam = Vector3::new(
            d_mean2d.x * fx / z,
            d_mean2d.y * fy / z,
            -d_mean2d.x * fx * x / (z * z) - d_mean2d.y * fy * y / (z * z),
        );
        let z2 = z * z;
        let z3 = z2 * z;
        d_cam.x += d_j[(0, 2)] * (-fx / z2);
        d_cam.y += d_j[(1, 2)] * (-fy / z2);
        d_cam.z += d_j[(0, 0)] * (-fx / z2)
            + d_j[(1, 1)] * (-fy / z2)
            + d_j[(0, 2)] * (2.0 * fx * x / z3)
            + d_j[(1, 2)] * (2.0 * fy * y / z3);
        let d_mean = w.transpose() * d_cam;

        // cov3d = M M^T, M = R S
        let m = self.rot * Matrix3::from_diagonal(&self.scales);
        let d_m = (d_cov3d + d_cov3d.transpose()) * m;
        let mut d_log_scale = [0.0; 3];
        let mut d_rot = Matrix3::zeros();
        for j in 0..3 {
            let mut ds = 0.0;
            for i in 0..3 {
                ds += d_m[(i, j)] * self.rot[(i, j)];
                d_rot[(i, j)] = d_m[(i, j)] * self.scales[j];
            }
            d_log_scale[j] = ds * self.scales[j];
        }

        let [qw, qx, qy, qz] = self.quat;
        let dr_dw = Matrix3::new(0.0, -qz, qy, qz, 0.0, -qx, -qy, qx, 0.0) * 2.0;
        let dr_dx = Matrix3::new(0.0, qy, qz, qy, -2.0 * qx, -qw, qz, qw, -2.0 * qx) * 2.0;
        let dr_dy = Matrix3::new(-2.0 * qy, qx, qw, qx, 0.0, qz, -qw, qz, -2.0 * qy) * 2.0;
        let dr_dz = Matrix3::new(-2.0 * qz, -qw, qx, qw, -2.0 * qz, qy, qx, qy, 0.0) * 2.0;
        let d_unit = [
            d_rot.component_mul(&dr_dw).sum(),
            d_rot.component_mul(&dr_dx).sum(),
            d_rot.component_mul(&dr_dy).sum(),
            d_rot.component_mul(&dr_dz).sum(),
        ];
        let radial: f64 = d_unit.iter().zip(&self.quat).map(|(g, q)| g * q).sum();
        let d_quat: [f64; 4] =
            std::array::from_fn(|k| (d_unit[k] - self.quat[k] * radial) / self.quat_norm);

        let mut out = [0.0; PARAM_COUNT];
        out[0..3].copy_from_slice(d_mean.as_slice());
        out[3..6].copy_from_slice(&d_log_scale);
        out[6..10].copy_from_slice(&d_quat);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cam() -> Camera {
        Camera::look_at(
            Point3::new(0.0, 0.0, -4.0),
            Point3::origin(),
            Vector3::new(0.0, -1.0, 0.0),
            60.0,
            (64, 48),
        )
        .unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let c = cam();
        let g = Gaussian::isotropic([0.0, 0.0, 0.0], 0.2, 0.5, [1.0; 3]);
        let p = project(&g, &c).unwrap();
        assert!((p.mean2d.x - c.cx).abs() < 1e-12);
        assert!((p.mean2d.y - c.cy).abs() < 1e-12);
        assert!((p.depth - 4.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_on_axis_is_isotropic() {
        let c = cam();
        let g = Gaussian::isotropic([0.0, 0.0, 0.0], 0.2, 0.5, [1.0; 3]);
        let p = project(&g, &c).unwrap();
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
        assert!((p.cov2d[(0, 0)] - p.cov2d[(1, 1)]).abs() < 1e-12);
        let expect = (60.0 * 0.2 / 4.0f64).powi(2) + COV_DILATION;
        assert!((p.cov2d[(0, 0)] - expect).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_skipped() {
        let g = Gaussian::isotropic([0.0, 0.0, -5.0], 0.2, 0.5, [1.0; 3]);
        assert!(project(&g, &cam()).is_none());
    }

    /// Covariance of projected samples vs the linearized covariance.
    #[test]
    fn covariance_matches_monte_carlo_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let eye = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), -5.0);
            let c = Camera::look_at(eye, Point3::origin(), Vector3::new(0.0, -1.0, 0.0), 80.0, (64, 64))
                .unwrap();
            let g = Gaussian {
                mean: [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0],
                log_scale: [0.05f64.ln(), 0.02f64.ln(), 0.03f64.ln()],
                rotation: normalized([1.0, rng.random(), rng.random(), rng.random()]),
                opacity_logit: 0.0,
                color: [0.5; 3],
            };
            let p = project(&g, &c).unwrap();
            let rot = g.rotation_matrix();
            let s = Vector3::from(g.scales());
            let n = 200_000;
            let mut mean = Vector2::zeros();
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let e = Vector3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                let world = g.mean_vec() + rot * s.component_mul(&e);
                let pc = c.to_camera_frame(&world);
                let uv = Vector2::new(c.fx * pc.x / pc.z + c.cx, c.fy * pc.y / pc.z + c.cy);
                mean += uv;
                pts.push(uv);
            }
            mean /= n as f64;
            let mut cov = Matrix2::zeros();
            for uv in &pts {
                let d = uv - mean;
                cov += d * d.transpose();
            }
            cov /= n as f64;
            let lin = p.cov2d - Matrix2::identity() * COV_DILATION;
            let rel = (cov - lin).norm() / lin.norm();
            assert!(rel < 0.05, "relative covariance error {rel}");
        }
    }
}
