//! Turns a [`RunConfig`] into the scene, views, editor and difficulty oracle.

use std::sync::Arc;

use anyhow::{bail, Context};
use proedit_core::camera::Camera;
use proedit_core::difficulty::{select_views, DifficultyEstimator};
use proedit_core::editor::{Editor, RemoteEditor, SyntheticEditor, SyntheticEditorConfig};
use proedit_core::embedding::{load_embeddings, PromptPair};
use proedit_core::pipeline::{PipelineConfig, RunDir, View};
use proedit_core::splat::ply::load_checkpoint;
use proedit_core::splat::{render, GaussianCloud};

use crate::config::{EditorConfig, RunConfig, SceneConfig, ViewsConfig};

pub struct Setup {
    pub cameras: Vec<Camera>,
    pub views: Vec<View>,
    pub source: GaussianCloud,
    pub editor: Arc<dyn Editor>,
    pub estimator: Arc<DifficultyEstimator>,
    pub embeddings: Option<PromptPair>,
    pub run_dir: RunDir,
}

pub fn cameras(cfg: &RunConfig) -> anyhow::Result<Vec<Camera>> {
    Ok(match &cfg.views {
        ViewsConfig::Orbit(o) => o.cameras()?,
        ViewsConfig::Explicit { cameras } => cameras
            .iter()
            .enumerate()
            .map(|(i, p)| Camera::try_from(p).with_context(|| format!("camera {i}")))
            .collect::<anyhow::Result<_>>()?,
    })
}

fn scenes(cfg: &RunConfig) -> anyhow::Result<(GaussianCloud, Option<GaussianCloud>)> {
    Ok(match &cfg.scene {
        SceneConfig::Synthetic(spec) => (spec.source(), Some(spec.target())),
        SceneConfig::Checkpoints { source, target } => {
            let (src, _) = load_checkpoint(source).with_context(|| format!("source scene {}", source.display()))?;
            let tgt = match target {
                Some(t) => Some(load_checkpoint(t).with_context(|| format!("target scene {}", t.display()))?.0),
                None => None,
            };
            (src, tgt)
        }
    })
}

impl Setup {
    pub fn build(cfg: &RunConfig) -> anyhow::Result<Self> {
        let cameras = cameras(cfg)?;
        let (source, target) = scenes(cfg)?;
        let views: Vec<View> = cameras
            .iter()
            .map(|c| View {
                camera: c.clone(),
                original: render(&source, c).image,
            })
            .collect();
        let editor: Arc<dyn Editor> = match &cfg.editor {
            EditorConfig::Synthetic(fos) => {
                let Some(target) = target else {
                    bail!("the synthetic editor needs a target scene");
                };
                let ec = SyntheticEditorConfig::new(source.clone(), target, *fos, cfg.seed)?;
                Arc::new(SyntheticEditor::new(ec, cameras.clone())?)
            }
            EditorConfig::Remote(rc) => Arc::new(RemoteEditor::new(rc.clone())?),
        };
        let subset = select_views(views.len(), cfg.seed)
            .into_iter()
            .map(|i| (i, views[i].original.clone()))
            .collect();
        let estimator = Arc::new(DifficultyEstimator::new(editor.clone(), subset)?);
        let embeddings = match &cfg.embeddings {
            Some(p) => Some(load_embeddings(p).with_context(|| format!("embeddings {}", p.display()))?),
            None => None,
        };
        Ok(Self {
            cameras,
            views,
            source,
            editor,
            estimator,
            embeddings,
            run_dir: RunDir::new(&cfg.run_dir),
        })
    }
}

/// The pipeline settings with the run-level seed and determinism applied.
pub fn pipeline_config(cfg: &RunConfig, force_deterministic: bool) -> PipelineConfig {
    let mut p = cfg.pipeline.clone();
    p.deterministic |= cfg.deterministic || force_deterministic;
    p.seed = cfg.seed;
    p
}
