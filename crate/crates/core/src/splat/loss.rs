//! Photometric training loss `l1_weight * L1 + ssim_weight * (1 - SSIM)` with its gradient.

use crate::error::Result;
use crate::image::Image;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub l1_weight: f64,
    pub ssim_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            l1_weight: 0.8,
            ssim_weight: 0.2,
        }
    }
}

fn gaussian_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Zero-padded "same" separable convolution. Symmetric taps make it self-adjoint.
fn blur(plane: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM of `x` against `y` and, optionally, its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    x.ensure_same_size(y)?;
    let (w, h) = x.resolution();
    let taps = gaussian_taps();
    let n_total = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);

    for c in 0..3 {
        let xs = x.channel(c);
        let ys = y.channel(c);
        let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let mu_x = blur(&xs, w, h, &taps);
        let mu_y = blur(&ys, w, h, &taps);
        let e_xx = blur(&sq(&xs), w, h, &taps);
        let e_yy = blur(&sq(&ys), w, h, &taps);
        let e_xy = blur(&xy, w, h, &taps);

        let mut d_mu = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            let n1 = 2.0 * mx * my + C1;
            let n2 = 2.0 * cxy + C2;
            let d1 = mx * mx + my * my + C1;
            let d2 = vx + vy + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if grad.is_some() {
                let ds_dvx = -s / d2;
                let ds_dcxy = 2.0 * n1 / (d1 * d2);
                let ds_dmx = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
                d_mu[i] = (ds_dmx + ds_dvx * (-2.0 * mx) + ds_dcxy * (-my)) / n_total;
                d_exx[i] = ds_dvx / n_total;
                d_exy[i] = ds_dcxy / n_total;
            }
        }
        if let Some(g) = grad.as_mut() {
            let a = blur(&d_mu, w, h, &taps);
            let b = blur(&d_exx, w, h, &taps);
            let cc = blur(&d_exy, w, h, &taps);
            for i in 0..w * h {
                g[i * 3 + c] = a[i] + 2.0 * xs[i] * b[i] + ys[i] * cc[i];
            }
        }
    }
    let grad = match grad {
        Some(g) => Some(Image::from_raw(w, h, g)?),
        None => None,
    };
    Ok((total / n_total, grad))
}

/// Loss of `render` against `target` and its gradient with respect to `render`.
pub fn photometric_loss(render: &Image, target: &Image, cfg: &LossConfig) -> Result<(f64, Image)> {
    render.ensure_same_size(target)?;
    let (w, h) = render.resolution();
    let n = (w * h * 3) as f64;
    let mut l1 = 0.0;
    let mut grad = vec![0.0; w * h * 3];
    for (i, (r, t)) in render.data().iter().zip(target.data()).enumerate() {
        let d = r - t;
        l1 += d.abs();
        grad[i] = cfg.l1_weight * d.signum() * (d != 0.0) as u8 as f64 / n;
    }
    l1 /= n;
    let (ssim, ssim_grad) = ssim_with_grad(render, target, cfg.ssim_weight != 0.0)?;
    if let Some(sg) = ssim_grad {
        for (g, s) in grad.iter_mut().zip(sg.data()) {
            *g -= cfg.ssim_weight * s;
        }
    }
    let loss = cfg.l1_weight * l1 + cfg.ssim_weight * (1.0 - ssim);
    Ok((loss, Image::from_raw(w, h, grad)?))
}
