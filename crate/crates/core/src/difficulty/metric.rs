use crate::error::Result;
use crate::image::Image;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// A symmetric, zero-on-identity image distance in `[0, 1]`.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

/// `Σ_s w_s · (1 − max(SSIM_s, 0))` over a 2× box pyramid, with SSIM taken over
/// a uniform window at valid positions and averaged over color channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleStructural {
    pub window: usize,
    /// One weight per scale, finest first. Should sum to 1.
    pub weights: Vec<f64>,
}

impl Default for MultiScaleStructural {
    fn default() -> Self {
        Self {
            window: 7,
            weights: vec![0.2, 0.3, 0.5],
        }
    }
}

/// Summed-area table with a zero border row and column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, x: usize, y: usize, n: usize) -> f64 {
        let s = self.stride;
        self.sums[(y + n) * s + x + n] - self.sums[y * s + x + n] - self.sums[(y + n) * s + x] + self.sums[y * s + x]
    }
}

fn plane_ssim(a: &[f64], b: &[f64], w: usize, h: usize, window: usize) -> f64 {
    let n = window.min(w).min(h).max(1);
    let ia = Integral::new(w, h, |i| a[i]);
    let ib = Integral::new(w, h, |i| b[i]);
    let iaa = Integral::new(w, h, |i| a[i] * a[i]);
    let ibb = Integral::new(w, h, |i| b[i] * b[i]);
    let iab = Integral::new(w, h, |i| a[i] * b[i]);
    let count = (n * n) as f64;
    let mut total = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let ma = ia.window(x, y, n) / count;
            let mb = ib.window(x, y, n) / count;
            let va = (iaa.window(x, y, n) / count - ma * ma).max(0.0);
            let vb = (ibb.window(x, y, n) / count - mb * mb).max(0.0);
            let cov = iab.window(x, y, n) / count - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    total / ((w - n + 1) * (h - n + 1)) as f64
}

/// Mean SSIM over color channels with a `window`×`window` uniform window.
pub fn ssim(a: &Image, b: &Image, window: usize) -> Result<f64> {
    a.ensure_same_size(b)?;
    let (w, h) = a.resolution();
    let mut acc = 0.0;
    for c in 0..3 {
        acc += plane_ssim(&a.channel(c), &b.channel(c), w, h, window);
    }
    Ok(acc / 3.0)
}

impl PerceptualMetric for MultiScaleStructural {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        a.ensure_same_size(b)?;
        let mut x = a.clone();
        let mut y = b.clone();
        let mut d = 0.0;
        for (s, w) in self.weights.iter().enumerate() {
            if s > 0 {
                if x.width() < 2 || x.height() < 2 {
                    break;
                }
                x = x.downsample2();
                y = y.downsample2();
            }
            d += w * (1.0 - ssim(&x, &y, self.window)?.max(0.0));
        }
        Ok(d.clamp(0.0, 1.0))
    }
}

/// Distance under the default multi-scale structural metric.
pub fn image_distance(a: &Image, b: &Image) -> Result<f64> {
    MultiScaleStructural::default().distance(a, b)
}
