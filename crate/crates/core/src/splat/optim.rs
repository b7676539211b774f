//! Per-group Adam over the flat Gaussian parameters.

use serde::{Deserialize, Serialize};

use super::gaussian::{offset, GaussianCloud, Remap, PARAM_COUNT};
use super::render::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity_logit: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn per_param(&self, scene_extent: f64) -> [f64; PARAM_COUNT] {
        let mut lr = [0.0; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            lr[k] = match k {
                k if k < offset::LOG_SCALE => self.mean * scene_extent,
                k if k < offset::ROTATION => self.log_scale,
                k if k < offset::OPACITY => self.rotation,
                k if k < offset::COLOR => self.opacity_logit,
                _ => self.color,
            };
        }
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<[f64; PARAM_COUNT]>,
    v: Vec<[f64; PARAM_COUNT]>,
}

impl Adam {
    pub fn new(lr: LearningRates, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: vec![[0.0; PARAM_COUNT]; n],
            v: vec![[0.0; PARAM_COUNT]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; restores Gaussian invariants afterwards.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &Gradients) {
        assert_eq!(self.m.len(), cloud.len(), "optimizer state out of sync with cloud");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let extent = cloud.scene_extent();
        let lr = self.lr.per_param(extent);
        for (i, g) in cloud.gaussians_mut().iter_mut().enumerate() {
            let grad = &grads.params[i];
            let mut params = g.params();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAM_COUNT {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                params[k] -= lr[k] * mh / (vh.sqrt() + self.eps);
            }
            g.set_params(&params);
            g.restore_invariants(extent);
        }
    }

    /// Follows a structural edit of the cloud; fresh slots start with zero moments.
    pub fn apply_remap(&mut self, remap: &Remap) {
        let pick = |src: &Vec<[f64; PARAM_COUNT]>| -> Vec<[f64; PARAM_COUNT]> {
            remap
                .sources
                .iter()
                .map(|s| s.map(|i| src[i]).unwrap_or([0.0; PARAM_COUNT]))
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    /// Zeroes the opacity moments (used when opacities are reset).
    pub fn reset_opacity_moments(&mut self) {
        for (m, v) in self.m.iter_mut().zip(&mut self.v) {
            m[offset::OPACITY] = 0.0;
            v[offset::OPACITY] = 0.0;
        }
    }
}
