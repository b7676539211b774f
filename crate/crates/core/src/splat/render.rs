//! Depth-sorted front-to-back alpha compositing and its analytic backward pass.
//!
//! Per pixel, with Gaussians sorted near to far:
//!   T_0 = 1,  out = sum_i T_i a_i c_i + T_N bg,  T_{i+1} = T_i (1 - a_i)
//! where `a_i = opacity_i * k(p_i)` and `p_i` is half the squared Mahalanobis
//! distance of the pixel to the projected mean. The falloff `k` is `exp(-p)`
//! minus its tangent line at `KERNEL_CUTOFF`, renormalized, so that it reaches
//! zero at the cutoff with zero slope (C1 everywhere).

use nalgebra::{Matrix2, Vector2};

use super::gaussian::{offset, GaussianCloud, PARAM_COUNT};
use super::project::{project, Projected};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;

pub const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Half squared Mahalanobis distance at which the kernel reaches zero (4 sigma).
pub const KERNEL_CUTOFF: f64 = 8.0;

fn kernel_floor() -> f64 {
    (-KERNEL_CUTOFF).exp()
}

fn kernel_norm() -> f64 {
    1.0 - kernel_floor() * (1.0 + KERNEL_CUTOFF)
}

#[inline]
fn kernel(power: f64, floor: f64, norm: f64) -> f64 {
    ((-power).exp() - floor * (1.0 + KERNEL_CUTOFF - power)) / norm
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Sum over pixels of each Gaussian's compositing weight `T_i a_i`.
    pub per_gaussian_weight: Vec<f64>,
    /// Residual transmittance per pixel (row-major).
    pub final_transmittance: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every Gaussian parameter.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<[f64; PARAM_COUNT]>,
    /// dL/d(mean2d) in pixels.
    pub screen: Vec<[f64; 2]>,
    pub contributed: Vec<bool>,
}

impl Gradients {
    fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAM_COUNT]; n],
            screen: vec![[0.0; 2]; n],
            contributed: vec![false; n],
        }
    }

    /// Screen-space positional gradient norm in normalized device units.
    pub fn screen_norm_ndc(&self, i: usize, cam: &Camera) -> f64 {
        let [gu, gv] = self.screen[i];
        let gx = gu * cam.width as f64 * 0.5;
        let gy = gv * cam.height as f64 * 0.5;
        (gx * gx + gy * gy).sqrt()
    }
}

/// Projection results and per-pixel depth-ordered Gaussian lists.
struct Raster {
    projected: Vec<Option<Projected>>,
    opacity: Vec<f64>,
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

impl Raster {
    fn build(cloud: &GaussianCloud, cam: &Camera) -> Self {
        let (w, h) = cam.resolution();
        let gaussians = cloud.gaussians();
        let projected: Vec<Option<Projected>> = gaussians.iter().map(|g| project(g, cam)).collect();
        let opacity: Vec<f64> = gaussians.iter().map(|g| g.opacity()).collect();

        let mut order: Vec<usize> = (0..gaussians.len()).filter(|&i| projected[i].is_some()).collect();
        order.sort_by(|&a, &b| {
            let da = projected[a].as_ref().unwrap().depth;
            let db = projected[b].as_ref().unwrap().depth;
            da.total_cmp(&db).then(a.cmp(&b))
        });

        let bounds: Vec<(usize, [usize; 4])> = order
            .iter()
            .filter_map(|&i| {
                let p = projected[i].as_ref().unwrap();
                let r = (2.0 * KERNEL_CUTOFF * p.max_eigenvalue()).sqrt();
                let x0 = (p.mean2d.x - r).ceil().max(0.0);
                let x1 = (p.mean2d.x + r).floor().min(w as f64 - 1.0);
                let y0 = (p.mean2d.y - r).ceil().max(0.0);
                let y1 = (p.mean2d.y + r).floor().min(h as f64 - 1.0);
                if !(x0 <= x1 && y0 <= y1) {
                    return None;
                }
                Some((i, [x0 as usize, x1 as usize, y0 as usize, y1 as usize]))
            })
            .collect();

        let mut counts = vec![0u32; w * h + 1];
        for (_, [x0, x1, y0, y1]) in &bounds {
            for y in *y0..=*y1 {
                for x in *x0..=*x1 {
                    counts[y * w + x + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut entries = vec![0u32; *offsets.last().unwrap() as usize];
        for (gi, [x0, x1, y0, y1]) in &bounds {
            for y in *y0..=*y1 {
                for x in *x0..=*x1 {
                    let c = &mut cursor[y * w + x];
                    entries[*c as usize] = *gi as u32;
                    *c += 1;
                }
            }
        }
        Self {
            projected,
            opacity,
            offsets,
            entries,
        }
    }

    fn pixel_entries(&self, pixel: usize) -> &[u32] {
        &self.entries[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }
}

struct Hit {
    gaussian: usize,
    alpha: f64,
    kernel: f64,
    power: f64,
    dx: f64,
    dy: f64,
    transmittance: f64,
}

/// Walks one pixel's depth-ordered list, calling `f` for each composited Gaussian.
/// Returns the residual transmittance.
fn composite_pixel(raster: &Raster, pixel: usize, px: f64, py: f64, mut f: impl FnMut(Hit)) -> f64 {
    let floor = kernel_floor();
    let norm = kernel_norm();
    let mut t = 1.0;
    for &gi in raster.pixel_entries(pixel) {
        let gi = gi as usize;
        let p = raster.projected[gi].as_ref().unwrap();
        let dx = px - p.mean2d.x;
        let dy = py - p.mean2d.y;
        let q = &p.conic;
        let power = 0.5 * (q[(0, 0)] * dx * dx + 2.0 * q[(0, 1)] * dx * dy + q[(1, 1)] * dy * dy);
        if !(power < KERNEL_CUTOFF) {
            continue;
        }
        let kernel = kernel(power, floor, norm);
        let alpha = raster.opacity[gi] * kernel;
        if alpha <= 0.0 {
            continue;
        }
        f(Hit {
            gaussian: gi,
            alpha,
            kernel,
            power,
            dx,
            dy,
            transmittance: t,
        });
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_CUTOFF {
            break;
        }
    }
    t
}

pub fn render(cloud: &GaussianCloud, cam: &Camera) -> RenderOutput {
    let raster = Raster::build(cloud, cam);
    forward(cloud, cam, &raster)
}

fn forward(cloud: &GaussianCloud, cam: &Camera, raster: &Raster) -> RenderOutput {
    let (w, h) = cam.resolution();
    let gaussians = cloud.gaussians();
    let mut weights = vec![0.0; gaussians.len()];
    let mut final_t = vec![0.0; w * h];
    let mut data = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let pixel = y * w + x;
            let mut acc = [0.0; 3];
            let t = composite_pixel(raster, pixel, x as f64, y as f64, |hit| {
                let wgt = hit.alpha * hit.transmittance;
                let c = &gaussians[hit.gaussian].color;
                for k in 0..3 {
                    acc[k] += wgt * c[k];
                }
                weights[hit.gaussian] += wgt;
            });
            final_t[pixel] = t;
            for k in 0..3 {
                data[pixel * 3 + k] = (acc[k] + t * BACKGROUND[k]).clamp(0.0, 1.0);
            }
        }
    }
    RenderOutput {
        image: Image::from_raw(w, h, data).expect("sized buffer"),
        per_gaussian_weight: weights,
        final_transmittance: final_t,
    }
}

/// Gradients of `sum(grad_image * render(cloud, cam))`.
pub fn backward(cloud: &GaussianCloud, cam: &Camera, grad_image: &Image) -> Result<Gradients> {
    let raster = Raster::build(cloud, cam);
    backward_with(cloud, cam, &raster, grad_image)
}

fn backward_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    raster: &Raster,
    grad_image: &Image,
) -> Result<Gradients> {
    let (w, h) = cam.resolution();
    if grad_image.resolution() != (w, h) {
        return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", grad_image.width(), grad_image.height())));
    }
    let gaussians = cloud.gaussians();
    let n = gaussians.len();
    let mut grads = Gradients::zeros(n);
    let mut d_mean2d = vec![Vector2::zeros(); n];
    let mut d_conic = vec![Matrix2::zeros(); n];
    let mut d_opacity = vec![0.0; n];
    let floor = kernel_floor();
    let norm = kernel_norm();
    let g = grad_image.data();
    let mut hits = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let pixel = y * w + x;
            let d_out = [g[pixel * 3], g[pixel * 3 + 1], g[pixel * 3 + 2]];
            hits.clear();
            composite_pixel(raster, pixel, x as f64, y as f64, |hit| hits.push(hit));
            if hits.is_empty() {
                continue;
            }
            let mut g_t_next: f64 = (0..3).map(|k| d_out[k] * BACKGROUND[k]).sum();
            for hit in hits.iter().rev() {
                let gi = hit.gaussian;
                grads.contributed[gi] = true;
                let c = &gaussians[gi].color;
                let wgt = hit.transmittance * hit.alpha;
                let p = &mut grads.params[gi];
                for k in 0..3 {
                    p[offset::COLOR + k] += d_out[k] * wgt;
                }
                let dot_c: f64 = (0..3).map(|k| d_out[k] * c[k]).sum();
                let d_alpha = (dot_c - g_t_next) * hit.transmittance;
                g_t_next = dot_c * hit.alpha + g_t_next * (1.0 - hit.alpha);

                let o = raster.opacity[gi];
                d_opacity[gi] += d_alpha * hit.kernel;
                let d_power = d_alpha * o * (floor - (-hit.power).exp()) / norm;
                let q = &raster.projected[gi].as_ref().unwrap().conic;
                let (dx, dy) = (hit.dx, hit.dy);
                d_mean2d[gi] -= d_power
                    * Vector2::new(q[(0, 0)] * dx + q[(0, 1)] * dy, q[(0, 1)] * dx + q[(1, 1)] * dy);
                let cross = 0.5 * dx * dy;
                d_conic[gi] += d_power * Matrix2::new(0.5 * dx * dx, cross, cross, 0.5 * dy * dy);
            }
        }
    }

    for gi in 0..n {
        if !grads.contributed[gi] {
            continue;
        }
        let proj = raster.projected[gi].as_ref().unwrap();
        let geo = proj.backward(cam, d_mean2d[gi], d_conic[gi]);
        let p = &mut grads.params[gi];
        for k in 0..offset::OPACITY {
            p[k] += geo[k];
        }
        let o = raster.opacity[gi];
        p[offset::OPACITY] += d_opacity[gi] * o * (1.0 - o);
        grads.screen[gi] = [d_mean2d[gi].x, d_mean2d[gi].y];
    }
    Ok(grads)
}

/// Forward render plus a closure-supplied image gradient, sharing one rasterization.
pub fn render_and_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    grad_of: impl FnOnce(&Image) -> Result<(f64, Image)>,
) -> Result<(f64, RenderOutput, Gradients)> {
    let raster = Raster::build(cloud, cam);
    let out = forward(cloud, cam, &raster);
    let (loss, grad_image) = grad_of(&out.image)?;
    let grads = backward_with(cloud, cam, &raster, &grad_image)?;
    Ok((loss, out, grads))
}

/// Renders and then records positional-gradient statistics into the cloud.
pub fn backward_accumulate(cloud: &mut GaussianCloud, cam: &Camera, grad_image: &Image) -> Result<Gradients> {
    let grads = backward(cloud, cam, grad_image)?;
    accumulate_stats(cloud, cam, &grads);
    Ok(grads)
}

pub fn accumulate_stats(cloud: &mut GaussianCloud, cam: &Camera, grads: &Gradients) {
    for i in 0..cloud.len() {
        if grads.contributed[i] {
            cloud.add_observation(i, grads.screen_norm_ndc(i, cam));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::gaussian::Gaussian;
    use nalgebra::{Point3, Vector3};

    fn cam(res: usize) -> Camera {
        Camera::look_at(
            Point3::new(0.0, 0.0, -3.0),
            Point3::origin(),
            Vector3::new(0.0, -1.0, 0.0),
            res as f64,
            (res, res),
        )
        .unwrap()
    }

    #[test]
    fn empty_cloud_renders_background() {
        let out = render(&GaussianCloud::empty(1.0), &cam(16));
        assert!(out.image.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn brightest_at_principal_point() {
        let c = cam(32);
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic([0.0; 3], 0.2, 0.99, [0.0; 3])], 1.0).unwrap();
        let img = render(&cloud, &c).image;
        let mut best = (f64::INFINITY, 0, 0);
        for y in 0..32 {
            for x in 0..32 {
                let v = img.pixel(x, y)[0];
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        assert_eq!((best.1, best.2), (c.cx as usize, c.cy as usize));
    }

    #[test]
    fn two_layer_composite_formula() {
        let c = cam(32);
        let front = Gaussian::isotropic([0.0, 0.0, -0.5], 0.1, 0.6, [1.0, 0.0, 0.0]);
        let back = Gaussian::isotropic([0.0, 0.0, 0.5], 0.1, 0.7, [0.0, 0.0, 1.0]);
        let cloud = GaussianCloud::new(vec![back.clone(), front.clone()], 1.0).unwrap();
        let img = render(&cloud, &c).image;
        // Both means land exactly on the principal-point pixel: kernel at zero power is 1.
        let a1 = 0.6;
        let a2 = 0.7;
        let expect = [
            a1 + 0.0 + (1.0 - a1) * (1.0 - a2),
            (1.0 - a1) * (1.0 - a2),
            a2 * (1.0 - a1) + (1.0 - a1) * (1.0 - a2),
        ];
        let got = img.pixel(16, 16);
        for k in 0..3 {
            assert!((got[k] - expect[k]).abs() < 1e-12, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn zero_grad_image_gives_zero_gradients() {
        let c = cam(16);
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic([0.1, 0.0, 0.0], 0.3, 0.5, [0.2, 0.4, 0.6])], 1.0)
            .unwrap();
        let g = backward(&cloud, &c, &Image::new(16, 16, [0.0; 3])).unwrap();
        assert!(g.params[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invisible_gaussian_has_zero_gradient_and_no_observation() {
        let c = cam(16);
        let mut cloud = GaussianCloud::new(
            vec![
                Gaussian::isotropic([0.0, 0.0, 0.0], 0.3, 0.5, [0.2, 0.4, 0.6]),
                Gaussian::isotropic([0.0, 0.0, -10.0], 0.3, 0.5, [0.2, 0.4, 0.6]),
                Gaussian::isotropic([50.0, 0.0, 0.0], 0.1, 0.5, [0.2, 0.4, 0.6]),
            ],
            1.0,
        )
        .unwrap();
        let g = backward_accumulate(&mut cloud, &c, &Image::new(16, 16, [0.3, -0.2, 0.1])).unwrap();
        for i in [1, 2] {
            assert!(g.params[i].iter().all(|&v| v == 0.0));
            assert_eq!(cloud.obs_count()[i], 0);
        }
        assert_eq!(cloud.obs_count()[0], 1);
    }
}
