//! Procedural source/target scene pairs for synthetic editing runs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Orbit};
use crate::difficulty::{select_views, DifficultyEstimator};
use crate::editor::{ground_truth_render, FosParams, SyntheticEditor, SyntheticEditorConfig};
use crate::embedding::Ratio;
use crate::error::Result;
use crate::image::Image;
use crate::pipeline::View;
use crate::splat::{render, Gaussian, GaussianCloud};

/// Parameters of the built-in synthetic editing benchmark: a textured sphere
/// (source) that is recolored and stretched into an elongated ellipsoid (target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub gaussians: usize,
    pub radius: f64,
    /// Per-axis stretch applied to positions and scales in the target.
    pub target_stretch: [f64; 3],
    /// Blend weight toward the target palette.
    pub recolor: f64,
    pub gaussian_scale: f64,
    pub opacity: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            gaussians: 200,
            radius: 0.8,
            target_stretch: [1.6, 0.75, 0.75],
            recolor: 0.8,
            gaussian_scale: 0.11,
            opacity: 0.9,
        }
    }
}

/// Evenly spread unit directions (golden-angle spiral).
fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let theta = golden * i as f64;
            [r * theta.cos(), y, r * theta.sin()]
        })
        .collect()
}

fn source_color(d: &[f64; 3]) -> [f64; 3] {
    // Banded pattern so views are distinguishable.
    let band = (0.5 + 0.5 * (4.0 * d[1]).sin()) * 0.5;
    [0.15 + 0.3 * band, 0.35 + 0.4 * (0.5 + 0.5 * d[0]), 0.55 + 0.4 * band]
}

fn target_color(d: &[f64; 3]) -> [f64; 3] {
    let stripe = 0.5 + 0.5 * (5.0 * d[0]).cos();
    [0.85 + 0.1 * stripe, 0.3 + 0.4 * stripe, 0.1 + 0.2 * (0.5 + 0.5 * d[2])]
}

impl SceneSpec {
    pub fn scene_extent(&self) -> f64 {
        let stretch = self.target_stretch.iter().cloned().fold(1.0, f64::max);
        2.0 * self.radius * stretch
    }

    pub fn source(&self) -> GaussianCloud {
        let gs = fibonacci_sphere(self.gaussians)
            .iter()
            .map(|d| {
                Gaussian::isotropic(
                    d.map(|v| v * self.radius),
                    self.gaussian_scale,
                    self.opacity,
                    source_color(d),
                )
            })
            .collect();
        GaussianCloud::new(gs, self.scene_extent()).expect("positive extent")
    }

    pub fn target(&self) -> GaussianCloud {
        let gs = fibonacci_sphere(self.gaussians)
            .iter()
            .map(|d| {
                let mut g = Gaussian::isotropic(
                    std::array::from_fn(|k| d[k] * self.radius * self.target_stretch[k]),
                    self.gaussian_scale,
                    self.opacity,
                    [0.0; 3],
                );
                for k in 0..3 {
                    g.log_scale[k] += self.target_stretch[k].ln();
                }
                let (s, t) = (source_color(d), target_color(d));
                g.color = std::array::from_fn(|k| (1.0 - self.recolor) * s[k] + self.recolor * t[k]);
                g
            })
            .collect();
        GaussianCloud::new(gs, self.scene_extent()).expect("positive extent")
    }
}

/// Everything needed to run the synthetic editing benchmark.
pub struct SyntheticBench {
    pub source: GaussianCloud,
    pub target: GaussianCloud,
    pub views: Vec<View>,
    pub editor: Arc<SyntheticEditor>,
}

impl SyntheticBench {
    pub fn new(spec: &SceneSpec, orbit: &Orbit, fos: FosParams, seed: u64) -> Result<Self> {
        let source = spec.source();
        let target = spec.target();
        let cameras = orbit.cameras()?;
        let views = cameras
            .iter()
            .map(|c| View {
                camera: c.clone(),
                original: render(&source, c).image,
            })
            .collect();
        let cfg = SyntheticEditorConfig::new(source.clone(), target.clone(), fos, seed)?;
        let editor = Arc::new(SyntheticEditor::new(cfg, cameras)?);
        Ok(Self {
            source,
            target,
            views,
            editor,
        })
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    /// Difficulty over the capped view subset, on renders of the original scene.
    pub fn estimator(&self, seed: u64) -> Result<DifficultyEstimator> {
        let views = select_views(self.views.len(), seed)
            .into_iter()
            .map(|i| (i, self.views[i].original.clone()))
            .collect();
        DifficultyEstimator::new(self.editor.clone(), views)
    }

    pub fn ground_truth(&self, r: Ratio) -> Result<Vec<Image>> {
        self.views
            .iter()
            .map(|v| ground_truth_render(&v.camera, r, self.editor.config()))
            .collect()
    }
}
