//! Perceptual image distance and the pairwise subtask difficulty d(r_a, r_b).

mod metric;

pub use metric::{image_distance, ssim, MultiScaleStructural, PerceptualMetric, SSIM_C1, SSIM_C2};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::editor::Editor;
use crate::embedding::Ratio;
use crate::error::{Error, Result};
use crate::image::Image;

/// Views used for difficulty estimation when the training set is larger.
pub const MAX_DIFFICULTY_VIEWS: usize = 16;

const QUANTUM: f64 = 1e-6;

fn quantize(r: f64) -> i64 {
    (r / QUANTUM).round() as i64
}

/// Indices of the views entering the difficulty sum: all of them up to
/// [`MAX_DIFFICULTY_VIEWS`], otherwise a sorted seeded subsample.
pub fn select_views(n_views: usize, seed: u64) -> Vec<usize> {
    if n_views <= MAX_DIFFICULTY_VIEWS {
        return (0..n_views).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n_views, MAX_DIFFICULTY_VIEWS).into_vec();
    picked.sort_unstable();
    picked
}

/// Memo of pairwise difficulties and of the per-view edits behind them.
#[derive(Default)]
pub struct DifficultyCache {
    pairs: Mutex<HashMap<(i64, i64), f64>>,
    edits: Mutex<HashMap<i64, Arc<Vec<Image>>>>,
}

impl DifficultyCache {
    fn key(a: f64, b: f64) -> (i64, i64) {
        let (qa, qb) = (quantize(a), quantize(b));
        (qa.min(qb), qa.max(qb))
    }

    pub fn lookup(&self, a: f64, b: f64) -> Option<f64> {
        self.pairs.lock().unwrap().get(&Self::key(a, b)).copied()
    }

    fn insert(&self, a: f64, b: f64, d: f64) {
        self.pairs.lock().unwrap().insert(Self::key(a, b), d);
    }

    pub fn len(&self) -> usize {
        self.pairs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `r_a r_b d` per line, sorted by (r_a, r_b) with r_a ≤ r_b.
    pub fn dump(&self) -> String {
        let pairs = self.pairs.lock().unwrap();
        let mut rows: Vec<_> = pairs.iter().map(|(&k, &d)| (k, d)).collect();
        rows.sort_by_key(|&(k, _)| k);
        let mut out = String::new();
        for ((a, b), d) in rows {
            let _ = writeln!(out, "{} {} {:?}", a as f64 * QUANTUM, b as f64 * QUANTUM, d);
        }
        out
    }
}

/// d(r_a, r_b) = Σ_k metric(edit_k(r_a), edit_k(r_b)) on renders of the original scene,
/// with full-strength edits.
pub struct DifficultyEstimator {
    editor: Arc<dyn Editor>,
    views: Vec<(usize, Image)>,
    metric: Box<dyn PerceptualMetric>,
    cache: DifficultyCache,
    evaluations: AtomicUsize,
    use_cache: bool,
}

impl DifficultyEstimator {
    /// `views` pairs each view id with the original scene's render from that view.
    pub fn new(editor: Arc<dyn Editor>, views: Vec<(usize, Image)>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Invalid("difficulty needs at least one view".into()));
        }
        if !editor.is_deterministic() {
            return Err(Error::Invalid(
                "difficulty estimation needs a deterministic editor (disable resampling)".into(),
            ));
        }
        Ok(Self {
            editor,
            views,
            metric: Box::new(MultiScaleStructural::default()),
            cache: DifficultyCache::default(),
            evaluations: AtomicUsize::new(0),
            use_cache: true,
        })
    }

    pub fn with_metric(mut self, metric: Box<dyn PerceptualMetric>) -> Self {
        self.metric = metric;
        self
    }

    /// Disables memoization; results must not change.
    pub fn without_cache(mut self) -> Self {
        self.use_cache = false;
        self
    }

    pub fn cache(&self) -> &DifficultyCache {
        &self.cache
    }

    /// Number of pair evaluations that missed the cache.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn edits_at(&self, r: f64) -> Result<Arc<Vec<Image>>> {
        let q = quantize(r);
        if self.use_cache {
            if let Some(hit) = self.cache.edits.lock().unwrap().get(&q) {
                return Ok(hit.clone());
            }
        }
        let ratio = Ratio::new(r)?;
        let edits = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .views
                .iter()
                .map(|(id, img)| s.spawn(move || self.editor.edit(img, *id, ratio, 1.0)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("editor worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        let edits = Arc::new(edits);
        if self.use_cache {
            self.cache.edits.lock().unwrap().entry(q).or_insert_with(|| edits.clone());
        }
        Ok(edits)
    }

    pub fn difficulty(&self, a: f64, b: f64) -> Result<f64> {
        if quantize(a) == quantize(b) {
            return Ok(0.0);
        }
        if self.use_cache {
            if let Some(d) = self.cache.lookup(a, b) {
                return Ok(d);
            }
        }
        // Evaluate in a canonical order so d(a,b) and d(b,a) are bit-identical.
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ea, eb) = (self.edits_at(lo)?, self.edits_at(hi)?);
        let mut d = 0.0;
        for (x, y) in ea.iter().zip(eb.iter()) {
            d += self.metric.distance(x, y)?;
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        if self.use_cache {
            self.cache.insert(a, b, d);
        }
        Ok(d)
    }
}
