use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{blend, check_strength, Editor};
use crate::camera::Camera;
use crate::embedding::Ratio;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{render, GaussianCloud};

#[derive(Clone, Debug)]
pub struct SyntheticEditorConfig {
    pub source: GaussianCloud,
    pub target: GaussianCloud,
    /// Perturbation scale at r = 1, in scene units.
    pub fos_scale: f64,
    /// Growth exponent of the perturbation scale in r.
    pub fos_growth: f64,
    pub seed: u64,
    /// Draw a fresh perturbation on every call instead of one per view.
    pub resample: bool,
}

/// Serializable knobs of [`SyntheticEditorConfig`]; the clouds come from elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FosParams {
    pub fos_scale: f64,
    pub fos_growth: f64,
    pub resample: bool,
}

impl Default for FosParams {
    fn default() -> Self {
        Self {
            fos_scale: 0.1,
            fos_growth: 1.0,
            resample: false,
        }
    }
}

impl SyntheticEditorConfig {
    pub fn new(source: GaussianCloud, target: GaussianCloud, fos: FosParams, seed: u64) -> Result<Self> {
        let cfg = Self {
            source,
            target,
            fos_scale: fos.fos_scale,
            fos_growth: fos.fos_growth,
            seed,
            resample: fos.resample,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.len() != self.target.len() {
            return Err(Error::Invalid(format!(
                "source has {} gaussians but target has {}",
                self.source.len(),
                self.target.len()
            )));
        }
        if !(self.fos_scale >= 0.0 && self.fos_scale.is_finite()) {
            return Err(Error::Invalid(format!("fos_scale {} must be >= 0", self.fos_scale)));
        }
        if !(self.fos_growth > 0.0 && self.fos_growth.is_finite()) {
            return Err(Error::Invalid(format!("fos_growth {} must be > 0", self.fos_growth)));
        }
        Ok(())
    }

    /// σ(r) = σ_max · r^γ.
    pub fn sigma(&self, r: Ratio) -> f64 {
        self.fos_scale * r.get().powf(self.fos_growth)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Editor whose output for view k is a render of the interpolated scene with a
/// view-specific perturbation: the spread between views models the size of the
/// feasible output space.
pub struct SyntheticEditor {
    config: SyntheticEditorConfig,
    cameras: Vec<Camera>,
    calls: AtomicU64,
}

impl SyntheticEditor {
    pub fn new(config: SyntheticEditorConfig, cameras: Vec<Camera>) -> Result<Self> {
        config.validate()?;
        if cameras.is_empty() {
            return Err(Error::Invalid("synthetic editor needs at least one camera".into()));
        }
        Ok(Self {
            config,
            cameras,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SyntheticEditorConfig {
        &self.config
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    fn camera(&self, view_id: usize) -> Result<&Camera> {
        self.cameras
            .get(view_id)
            .ok_or_else(|| Error::Invalid(format!("view {view_id} out of range ({} views)", self.cameras.len())))
    }

    /// The scene hypothesis the editor commits to for `view_id` at ratio `r`.
    pub fn perturbed_scene(&self, view_id: usize, r: Ratio) -> Result<GaussianCloud> {
        let draw = if self.config.resample {
            self.calls.fetch_add(1, Ordering::Relaxed) + 1
        } else {
            0
        };
        self.perturbed_scene_with(view_id, r, draw)
    }

    fn perturbed_scene_with(&self, view_id: usize, r: Ratio, draw: u64) -> Result<GaussianCloud> {
        let mut cloud = GaussianCloud::lerp(&self.config.source, &self.config.target, r.get())?;
        let sigma = self.config.sigma(r);
        if sigma == 0.0 {
            return Ok(cloud);
        }
        let key = mix(mix(self.config.seed) ^ view_id as u64) ^ mix(draw);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let extent = cloud.scene_extent();
        for g in cloud.gaussians_mut() {
            for k in 0..3 {
                let n: f64 = StandardNormal.sample(&mut rng);
                g.mean[k] += sigma * n;
            }
            for k in 0..3 {
                let n: f64 = StandardNormal.sample(&mut rng);
                g.color[k] += sigma * n;
            }
            g.restore_invariants(extent);
        }
        Ok(cloud)
    }
}

impl Editor for SyntheticEditor {
    fn edit(&self, input: &Image, view_id: usize, r: Ratio, strength: f64) -> Result<Image> {
        check_strength(strength)?;
        let cam = self.camera(view_id)?;
        if input.resolution() != cam.resolution() {
            return Err(Error::dims(
                format!("{:?}", cam.resolution()),
                format!("{:?}", input.resolution()),
            ));
        }
        let scene = self.perturbed_scene(view_id, r)?;
        blend(input, render(&scene, cam).image, strength)
    }

    fn is_deterministic(&self) -> bool {
        !self.config.resample || self.config.fos_scale == 0.0
    }
}

/// Unperturbed render of the interpolated scene; evaluation only.
pub fn ground_truth_render(cam: &Camera, r: Ratio, config: &SyntheticEditorConfig) -> Result<Image> {
    let cloud = GaussianCloud::lerp(&config.source, &config.target, r.get())?;
    Ok(render(&cloud, cam).image)
}
