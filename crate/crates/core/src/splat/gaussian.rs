use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Scalar parameters per Gaussian: mean(3) log_scale(3) rotation(4) opacity_logit(1) color(3).
pub const PARAM_COUNT: usize = 14;

/// Offsets of each parameter group inside the flat parameter array.
pub mod offset {
    pub const MEAN: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
}

/// Smallest admissible scale, in scene units.
pub const MIN_SCALE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian {
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            mean,
            log_scale: [scale.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, opacity: f64) {
        self.opacity_logit = logit(opacity);
    }

    pub fn scales(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.scales().into_iter().fold(0.0, f64::max)
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&normalized(self.rotation))
    }

    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut p = [0.0; PARAM_COUNT];
        p[0..3].copy_from_slice(&self.mean);
        p[3..6].copy_from_slice(&self.log_scale);
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAM_COUNT]) {
        self.mean.copy_from_slice(&p[0..3]);
        self.log_scale.copy_from_slice(&p[3..6]);
        self.rotation.copy_from_slice(&p[6..10]);
        self.opacity_logit = p[10];
        self.color.copy_from_slice(&p[11..14]);
    }

    /// Restores the representation invariants after a parameter update.
    pub fn restore_invariants(&mut self, scene_extent: f64) {
        self.rotation = normalized(self.rotation);
        let hi = scene_extent.max(MIN_SCALE).ln();
        let lo = MIN_SCALE.ln();
        for s in &mut self.log_scale {
            *s = s.clamp(lo, hi);
        }
        for c in &mut self.color {
            *c = c.clamp(0.0, 1.0);
        }
    }

    /// Component-wise interpolation between two Gaussians; `r = 0` gives `a`, `r = 1` gives `b`.
    pub fn lerp(a: &Gaussian, b: &Gaussian, r: f64) -> Gaussian {
        let mix = |x: f64, y: f64| (1.0 - r) * x + r * y;
        let mut rot_b = b.rotation;
        let dot: f64 = a.rotation.iter().zip(&rot_b).map(|(x, y)| x * y).sum();
        if dot < 0.0 {
            rot_b = rot_b.map(|v| -v);
        }
        Gaussian {
            mean: std::array::from_fn(|i| mix(a.mean[i], b.mean[i])),
            log_scale: std::array::from_fn(|i| mix(a.log_scale[i], b.log_scale[i])),
            rotation: normalized(std::array::from_fn(|i| mix(a.rotation[i], rot_b[i]))),
            opacity_logit: mix(a.opacity_logit, b.opacity_logit),
            color: std::array::from_fn(|i| mix(a.color[i], b.color[i])),
        }
    }
}

pub fn normalized(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-30 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Describes how the Gaussian list was rewritten by a structural edit:
/// `sources[new] = Some(old)` when the new slot inherits old per-Gaussian state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Remap {
    pub sources: Vec<Option<usize>>,
}

impl Remap {
    pub fn identity(n: usize) -> Self {
        Self {
            sources: (0..n).map(Some).collect(),
        }
    }
}

/// The scene: Gaussians plus densification statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian>,
    grad_accum: Vec<f64>,
    obs_count: Vec<u32>,
    scene_extent: f64,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>, scene_extent: f64) -> Result<Self> {
        if !(scene_extent > 0.0 && scene_extent.is_finite()) {
            return Err(Error::Invalid(format!("scene extent {scene_extent} must be positive")));
        }
        let n = gaussians.len();
        Ok(Self {
            gaussians,
            grad_accum: vec![0.0; n],
            obs_count: vec![0; n],
            scene_extent,
        })
    }

    pub fn empty(scene_extent: f64) -> Self {
        Self::new(Vec::new(), scene_extent).expect("positive extent")
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn scene_extent(&self) -> f64 {
        self.scene_extent
    }

    pub fn grad_accum(&self) -> &[f64] {
        &self.grad_accum
    }

    pub fn obs_count(&self) -> &[u32] {
        &self.obs_count
    }

    /// Mean accumulated screen-space gradient per observation.
    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.obs_count[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.obs_count[i] as f64
        }
    }

    pub fn push(&mut self, g: Gaussian) {
        self.gaussians.push(g);
        self.grad_accum.push(0.0);
        self.obs_count.push(0);
    }

    pub fn add_observation(&mut self, i: usize, grad_norm: f64) {
        self.grad_accum[i] += grad_norm;
        self.obs_count[i] += 1;
    }

    pub fn set_stats(&mut self, i: usize, grad_accum: f64, obs_count: u32) {
        self.grad_accum[i] = grad_accum;
        self.obs_count[i] = obs_count;
    }

    pub fn reset_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.obs_count.iter_mut().for_each(|v| *v = 0);
    }

    /// Keeps only Gaussians where `keep[i]`; statistics rows follow.
    pub fn retain_mask(&mut self, keep: &[bool]) -> Remap {
        assert_eq!(keep.len(), self.len());
        let mut sources = Vec::new();
        let mut w = 0;
        for r in 0..self.len() {
            if keep[r] {
                self.gaussians.swap(w, r);
                self.grad_accum[w] = self.grad_accum[r];
                self.obs_count[w] = self.obs_count[r];
                sources.push(Some(r));
                w += 1;
            }
        }
        self.gaussians.truncate(w);
        self.grad_accum.truncate(w);
        self.obs_count.truncate(w);
        Remap { sources }
    }

    /// Parameter-wise interpolation between two clouds of equal size.
    pub fn lerp(a: &GaussianCloud, b: &GaussianCloud, r: f64) -> Result<GaussianCloud> {
        if a.len() != b.len() {
            return Err(Error::dims(a.len(), b.len()));
        }
        if r == 0.0 {
            return Ok(a.clone());
        }
        if r == 1.0 {
            return Ok(b.clone());
        }
        let gaussians = a
            .gaussians
            .iter()
            .zip(&b.gaussians)
            .map(|(ga, gb)| Gaussian::lerp(ga, gb, r))
            .collect();
        let extent = (1.0 - r) * a.scene_extent + r * b.scene_extent;
        GaussianCloud::new(gaussians, extent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let q = normalized([0.3, -0.5, 0.2, 0.7]);
        let r = rotation_matrix(&q);
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lerp_color_midpoint() {
        let a = GaussianCloud::new(vec![Gaussian::isotropic([0.0; 3], 0.1, 0.5, [0.0; 3])], 1.0).unwrap();
        let b = GaussianCloud::new(vec![Gaussian::isotropic([0.0; 3], 0.1, 0.5, [1.0; 3])], 1.0).unwrap();
        let m = GaussianCloud::lerp(&a, &b, 0.5).unwrap();
        assert_eq!(m.gaussians()[0].color, [0.5; 3]);
        assert_eq!(GaussianCloud::lerp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(GaussianCloud::lerp(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn retain_keeps_stats_aligned() {
        let mut c = GaussianCloud::empty(1.0);
        for i in 0..5 {
            c.push(Gaussian::isotropic([i as f64, 0.0, 0.0], 0.1, 0.5, [0.5; 3]));
            c.add_observation(i, i as f64);
        }
        let remap = c.retain_mask(&[true, false, true, false, true]);
        assert_eq!(remap.sources, vec![Some(0), Some(2), Some(4)]);
        assert_eq!(c.grad_accum(), &[0.0, 2.0, 4.0]);
        assert_eq!(c.obs_count(), &[1, 1, 1]);
        assert_eq!(c.gaussians()[1].mean[0], 2.0);
    }

    #[test]
    fn invariants_restored() {
        let mut g = Gaussian::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3]);
        g.rotation = [2.0, 0.0, 0.0, 0.0];
        g.log_scale = [-50.0, 10.0, 0.0];
        g.color = [-0.2, 1.3, 0.5];
        g.restore_invariants(2.0);
        let n: f64 = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
        let s = g.scales();
        assert!(s.iter().all(|&v| (MIN_SCALE * 0.999999..=2.000001).contains(&v)));
        assert_eq!(g.color, [0.0, 1.0, 0.5]);
    }
}
