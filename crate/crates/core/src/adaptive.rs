//! Gaussian maintenance: opacity reset at stage start, opacity culling, and
//! densification under the creation budget t(n).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::gaussian::logit;
use crate::splat::{Adam, GaussianCloud, Remap};

/// How many Gaussians densification may create per maintenance event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CreationMode {
    /// Top-t(n) by mean screen gradient.
    Budgeted,
    /// Every Gaussian above a fixed gradient threshold, with no budget.
    Unlimited { grad_threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    pub cull_opacity: f64,
    pub reset_opacity: f64,
    pub warmup_iters: u64,
    pub interval: u64,
    pub budget_fraction: f64,
    pub hard_cap: usize,
    /// Fraction of the scene extent above which a selected Gaussian is split.
    pub split_scale_fraction: f64,
    pub split_shrink: f64,
    pub mode: CreationMode,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            cull_opacity: 0.005,
            reset_opacity: 0.005,
            warmup_iters: 300,
            interval: 100,
            budget_fraction: 0.01,
            hard_cap: 50_000,
            split_scale_fraction: 0.01,
            split_shrink: 1.6,
            mode: CreationMode::Budgeted,
        }
    }
}

impl MaintenanceConfig {
    pub fn validate(&self, initial_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.cull_opacity > 0.0 && self.cull_opacity < 1.0) {
            return bad(format!("cull_opacity {} outside (0, 1)", self.cull_opacity));
        }
        if !(self.reset_opacity > 0.0 && self.reset_opacity < 1.0) {
            return bad(format!("reset_opacity {} outside (0, 1)", self.reset_opacity));
        }
        if !(self.budget_fraction >= 0.0) {
            return bad(format!("budget_fraction {} must be >= 0", self.budget_fraction));
        }
        if self.hard_cap < initial_size {
            return bad(format!("hard_cap {} below initial size {initial_size}", self.hard_cap));
        }
        if self.interval == 0 || !(self.split_shrink > 1.0) {
            return bad("interval must be >= 1 and split_shrink > 1".into());
        }
        Ok(())
    }

    pub fn split_threshold(&self, scene_extent: f64) -> f64 {
        self.split_scale_fraction * scene_extent
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub n_culled: usize,
    pub n_created: usize,
    pub n_total_after: usize,
    /// Creation budget in force for this event.
    pub budget_used: usize,
}

/// Logit whose sigmoid is the smallest representable opacity ≥ `target`.
fn logit_at_least(target: f64) -> f64 {
    let mut l = logit(target);
    while crate::splat::gaussian::sigmoid(l) < target {
        l = l.next_up();
    }
    l
}

/// Sets every opacity to `cfg.reset_opacity`.
pub fn opacity_reset(cloud: &mut GaussianCloud, cfg: &MaintenanceConfig) {
    let l = logit_at_least(cfg.reset_opacity);
    for g in cloud.gaussians_mut() {
        g.opacity_logit = l;
    }
}

/// Removes Gaussians with opacity below `cull_opacity`.
pub fn cull(cloud: &mut GaussianCloud, cfg: &MaintenanceConfig) -> Result<(usize, Remap)> {
    let keep: Vec<bool> = cloud.gaussians().iter().map(|g| g.opacity() >= cfg.cull_opacity).collect();
    let n_keep = keep.iter().filter(|&&k| k).count();
    if n_keep == 0 && !cloud.is_empty() {
        return Err(Error::CloudEmptied);
    }
    let n_culled = cloud.len() - n_keep;
    Ok((n_culled, cloud.retain_mask(&keep)))
}

/// t = min(n_culled + ⌈γ·n_total⌉, N_max − n_total).
pub fn creation_budget(n_culled: usize, n_total: usize, cfg: &MaintenanceConfig) -> usize {
    let growth = (cfg.budget_fraction * n_total as f64).ceil() as usize;
    (n_culled + growth).min(cfg.hard_cap.saturating_sub(n_total))
}

/// Indices with nonzero mean gradient, highest first, ties by index.
pub fn densify_ranking(cloud: &GaussianCloud) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.mean_grad(i) > 0.0).collect();
    idx.sort_by(|&a, &b| cloud.mean_grad(b).total_cmp(&cloud.mean_grad(a)).then(a.cmp(&b)));
    idx
}

/// Splits or duplicates the selected Gaussians; every selection creates exactly one.
fn densify_selected(
    cloud: &mut GaussianCloud,
    selected: &[usize],
    cfg: &MaintenanceConfig,
    rng: &mut ChaCha8Rng,
) -> Remap {
    let n = cloud.len();
    let extent = cloud.scene_extent();
    let tau = cfg.split_threshold(extent);
    let mut sources: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut children = Vec::with_capacity(selected.len());
    for &i in selected {
        let parent = cloud.gaussians()[i].clone();
        if parent.max_scale() > tau {
            let scales = parent.scales();
            let axis = (0..3).max_by(|&a, &b| scales[a].total_cmp(&scales[b])).unwrap();
            let dir = parent.rotation_matrix().column(axis).into_owned() * (0.5 * scales[axis]);
            let mut a = parent.clone();
            let mut b = parent;
            for k in 0..3 {
                a.mean[k] += dir[k];
                b.mean[k] -= dir[k];
                a.log_scale[k] -= cfg.split_shrink.ln();
                b.log_scale[k] -= cfg.split_shrink.ln();
            }
            a.restore_invariants(extent);
            b.restore_invariants(extent);
            cloud.gaussians_mut()[i] = a;
            sources[i] = None;
            children.push(b);
        } else {
            let mut c = parent;
            for k in 0..3 {
                let z: f64 = StandardNormal.sample(rng);
                c.mean[k] += 1e-3 * extent * z;
            }
            children.push(c);
        }
        cloud.set_stats(i, 0.0, 0);
    }
    for c in children {
        cloud.push(c);
        sources.push(None);
    }
    Remap { sources }
}

/// Densifies the `budget` highest-ranked Gaussians. Returns the count created.
pub fn densify(cloud: &mut GaussianCloud, budget: usize, cfg: &MaintenanceConfig, rng: &mut ChaCha8Rng) -> (usize, Remap) {
    let ranked = densify_ranking(cloud);
    let selected = &ranked[..budget.min(ranked.len())];
    let remap = densify_selected(cloud, selected, cfg, rng);
    (selected.len(), remap)
}

/// Drives maintenance between training steps of one stage.
#[derive(Clone, Debug)]
pub struct Maintainer {
    cfg: MaintenanceConfig,
    rng: ChaCha8Rng,
    since_reset: u64,
}

impl Maintainer {
    pub fn new(cfg: MaintenanceConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            since_reset: 0,
        }
    }

    pub fn config(&self) -> &MaintenanceConfig {
        &self.cfg
    }

    pub fn in_warmup(&self) -> bool {
        self.since_reset < self.cfg.warmup_iters
    }

    /// Stage start: reset opacities and their optimizer moments, arm warmup.
    pub fn begin_stage(&mut self, cloud: &mut GaussianCloud, opt: &mut Adam) {
        opacity_reset(cloud, &self.cfg);
        opt.reset_opacity_moments();
        cloud.reset_stats();
        self.since_reset = 0;
    }

    /// Call once after every training iteration. Returns a report when maintenance ran.
    pub fn after_step(&mut self, cloud: &mut GaussianCloud, opt: &mut Adam) -> Result<Option<MaintenanceReport>> {
        self.since_reset += 1;
        if self.in_warmup() || self.since_reset % self.cfg.interval != 0 {
            return Ok(None);
        }
        self.maintain(cloud, opt).map(Some)
    }

    /// Cull, then create; gated by warmup (a no-op report while warming up).
    pub fn maintain(&mut self, cloud: &mut GaussianCloud, opt: &mut Adam) -> Result<MaintenanceReport> {
        if self.in_warmup() {
            return Ok(MaintenanceReport {
                n_total_after: cloud.len(),
                ..MaintenanceReport::default()
            });
        }
        let (n_culled, remap) = cull(cloud, &self.cfg)?;
        opt.apply_remap(&remap);
        let (n_created, budget) = match self.cfg.mode {
            CreationMode::Budgeted => {
                let budget = creation_budget(n_culled, cloud.len(), &self.cfg);
                let (n, remap) = densify(cloud, budget, &self.cfg, &mut self.rng);
                opt.apply_remap(&remap);
                (n, budget)
            }
            CreationMode::Unlimited { grad_threshold } => {
                let room = self.cfg.hard_cap.saturating_sub(cloud.len());
                let selected: Vec<usize> = densify_ranking(cloud)
                    .into_iter()
                    .take_while(|&i| cloud.mean_grad(i) > grad_threshold)
                    .take(room)
                    .collect();
                let remap = densify_selected(cloud, &selected, &self.cfg, &mut self.rng);
                opt.apply_remap(&remap);
                (selected.len(), selected.len())
            }
        };
        cloud.reset_stats();
        Ok(MaintenanceReport {
            n_culled,
            n_created,
            n_total_after: cloud.len(),
            budget_used: budget,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{Gaussian, LearningRates};
    use proptest::prelude::*;

    fn cloud_with_opacities(ops: &[f64]) -> GaussianCloud {
        let gs = ops
            .iter()
            .enumerate()
            .map(|(i, &o)| Gaussian::isotropic([i as f64 * 0.1, 0.0, 0.0], 0.05, o, [0.5; 3]))
            .collect();
        GaussianCloud::new(gs, 2.0).unwrap()
    }

    #[test]
    fn reset_sets_every_opacity_to_the_threshold() {
        let cfg = MaintenanceConfig::default();
        let mut c = cloud_with_opacities(&[0.9, 0.1, 0.5, 0.999]);
        opacity_reset(&mut c, &cfg);
        for g in c.gaussians() {
            assert!(g.opacity() >= cfg.reset_opacity && g.opacity() - cfg.reset_opacity < 1e-15);
        }
        // A freshly reset Gaussian must survive culling.
        assert_eq!(cull(&mut c, &cfg).unwrap().0, 0);
    }

    #[test]
    fn maintenance_is_gated_during_warmup() {
        let cfg = MaintenanceConfig::default();
        let mut c = cloud_with_opacities(&[0.001, 0.9]);
        let mut opt = Adam::new(LearningRates::default(), c.len());
        let mut m = Maintainer::new(cfg, 0);
        m.begin_stage(&mut c, &mut opt);
        c.gaussians_mut()[0].set_opacity(0.001);
        let report = m.maintain(&mut c, &mut opt).unwrap();
        assert_eq!(report.n_culled, 0);
        assert_eq!(c.len(), 2);
        for _ in 0..299 {
            assert_eq!(m.after_step(&mut c, &mut opt).unwrap(), None);
        }
        assert!(m.after_step(&mut c, &mut opt).unwrap().is_some());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn cull_counts() {
        let cfg = MaintenanceConfig::default();
        assert_eq!(cull(&mut cloud_with_opacities(&[0.5, 0.01, 0.006]), &cfg).unwrap().0, 0);
        assert_eq!(cull(&mut cloud_with_opacities(&[0.5, 0.0025]), &cfg).unwrap().0, 1);
        assert!(matches!(
            cull(&mut cloud_with_opacities(&[0.001, 0.002]), &cfg),
            Err(Error::CloudEmptied)
        ));
    }

    #[test]
    fn budget_arithmetic() {
        let cfg = MaintenanceConfig::default();
        assert_eq!(creation_budget(100, 10_000, &cfg), 200);
        assert_eq!(creation_budget(100, 49_950, &cfg), 50);
        assert_eq!(creation_budget(0, 0, &cfg), 0);
    }

    fn graded_cloud(n: usize, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = cloud_with_opacities(&vec![0.5; n]);
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let obs = (i % 5) as u32;
            c.set_stats(i, if obs == 0 { 0.0 } else { z.abs() * obs as f64 }, obs);
        }
        c
    }

    #[test]
    fn ranking_matches_brute_force_sort() {
        let c = graded_cloud(100, 5);
        let mut expected: Vec<(f64, usize)> = (0..100)
            .filter(|&i| c.obs_count()[i] > 0)
            .map(|i| (c.grad_accum()[i] / c.obs_count()[i] as f64, i))
            .filter(|&(g, _)| g > 0.0)
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = expected.into_iter().map(|(_, i)| i).collect();
        assert_eq!(densify_ranking(&c), expected);
    }

    #[test]
    fn densify_respects_budget_and_resets_stats() {
        let cfg = MaintenanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = graded_cloud(100, 1);
        let before = c.clone();
        let (n, remap) = densify(&mut c, 0, &cfg, &mut rng);
        assert_eq!((n, c.len()), (0, 100));
        assert_eq!(remap, Remap::identity(100));
        assert_eq!(c, before);

        let eligible = densify_ranking(&c).len();
        let (n, remap) = densify(&mut c, 1000, &cfg, &mut rng);
        assert_eq!(n, eligible);
        assert_eq!(c.len(), 100 + eligible);
        assert_eq!(remap.sources.len(), c.len());
        for i in 0..c.len() {
            if before.obs_count().get(i).is_some_and(|&o| o > 0) || i >= 100 {
                assert_eq!((c.grad_accum()[i], c.obs_count()[i]), (0.0, 0));
            }
        }
    }

    #[test]
    fn large_gaussians_split_small_ones_duplicate() {
        let cfg = MaintenanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let big = Gaussian::isotropic([0.0; 3], 0.5, 0.5, [0.5; 3]);
        let small = Gaussian::isotropic([1.0, 0.0, 0.0], 0.001, 0.5, [0.5; 3]);
        let mut c = GaussianCloud::new(vec![big, small], 2.0).unwrap();
        c.set_stats(0, 1.0, 1);
        c.set_stats(1, 0.5, 1);
        let (n, remap) = densify(&mut c, 2, &cfg, &mut rng);
        assert_eq!(n, 2);
        assert_eq!(remap.sources, vec![None, Some(1), None, None]);
        let g = c.gaussians();
        assert!((g[0].scales()[0] - 0.5 / 1.6).abs() < 1e-12);
        assert!((g[0].mean[0] - g[2].mean[0]).abs() - 0.5 < 1e-12);
        assert!((g[3].scales()[0] - 0.001).abs() < 1e-15);
        let jitter = (0..3).map(|k| (g[3].mean[k] - g[1].mean[k]).powi(2)).sum::<f64>().sqrt();
        assert!(jitter > 0.0 && jitter < 0.02);
    }

    proptest! {
        #[test]
        fn growth_is_bounded_and_smooth(n in 1usize..400, culled_frac in 0.0f64..0.5, cap_slack in 0usize..50, seed in 0u64..1000) {
            let cfg = MaintenanceConfig { hard_cap: n + cap_slack, warmup_iters: 0, interval: 1, ..MaintenanceConfig::default() };
            let mut c = graded_cloud(n, seed);
            let n_low = (culled_frac * n as f64) as usize;
            for i in 0..n_low.min(n - 1) {
                c.gaussians_mut()[i].set_opacity(0.001);
            }
            let mut opt = Adam::new(LearningRates::default(), n);
            let mut m = Maintainer::new(cfg, seed);
            let before = c.len();
            let r = m.maintain(&mut c, &mut opt)?;
            prop_assert!(c.len() <= cfg.hard_cap);
            prop_assert!(r.n_created <= r.budget_used);
            let after_cull = before - r.n_culled;
            prop_assert!(r.n_created as i64 - r.n_culled as i64 <= (cfg.budget_fraction * after_cull as f64).ceil() as i64);
            prop_assert_eq!(c.grad_accum().len(), c.len());
            prop_assert_eq!(c.obs_count().len(), c.len());
            prop_assert_eq!(opt.len(), c.len());
        }
    }
}
