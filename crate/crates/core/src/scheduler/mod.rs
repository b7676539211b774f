//! Difficulty-aware subtask decomposition and training-convergence detection.

mod convergence;

pub use convergence::{ConvergenceConfig, LossWindow};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeLimits {
    /// Intervals narrower than this are never split.
    pub min_width: f64,
    pub max_subtasks: usize,
}

impl Default for DecomposeLimits {
    fn default() -> Self {
        Self {
            min_width: 1.0 / 64.0,
            max_subtasks: 64,
        }
    }
}

/// Sorted ratio set produced by [`decompose`].
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub ratios: Vec<f64>,
    /// False when some interval hit `min_width` while still above threshold.
    pub threshold_met: bool,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold.is_finite() {
        Ok(())
    } else {
        Err(Error::Rejected(format!("threshold must be positive, got {threshold}")))
    }
}

/// Recursive midpoint bisection of `[lo, hi]` until every piece has difficulty ≤ `threshold`.
pub fn decompose_interval<F>(
    oracle: &mut F,
    lo: f64,
    hi: f64,
    threshold: f64,
    limits: &DecomposeLimits,
) -> Result<Decomposition>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    check_threshold(threshold)?;
    let mut ratios = vec![lo];
    let mut met = true;
    split(oracle, lo, hi, threshold, limits, &mut ratios, &mut met)?;
    Ok(Decomposition {
        ratios,
        threshold_met: met,
    })
}

/// Appends the points of `(a, b]` to `out`, left to right.
fn split<F>(
    oracle: &mut F,
    a: f64,
    b: f64,
    threshold: f64,
    limits: &DecomposeLimits,
    out: &mut Vec<f64>,
    met: &mut bool,
) -> Result<()>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if oracle(a, b)? <= threshold {
        out.push(b);
        return Ok(());
    }
    if (b - a) / 2.0 < limits.min_width {
        *met = false;
        out.push(b);
        return Ok(());
    }
    // Each split adds one subtask; refuse before exceeding the cap.
    let subtasks_after_split = out.len() + 1;
    if subtasks_after_split > limits.max_subtasks {
        return Err(Error::TooManySubtasks {
            lo: a,
            hi: b,
            limit: limits.max_subtasks,
        });
    }
    let m = 0.5 * (a + b);
    split(oracle, a, m, threshold, limits, out, met)?;
    split(oracle, m, b, threshold, limits, out, met)
}

pub fn decompose<F>(oracle: &mut F, threshold: f64, limits: &DecomposeLimits) -> Result<Decomposition>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    decompose_interval(oracle, 0.0, 1.0, threshold, limits)
}

/// Pruning that leaves `ratios[..=frozen]` untouched; see [`prune`].
pub fn prune_from<F>(ratios: &[f64], oracle: &mut F, threshold: f64, frozen: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mut r = ratios.to_vec();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in (frozen + 1).max(1)..r.len().saturating_sub(1) {
            let d = oracle(r[i - 1], r[i + 1])?;
            if d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => {
                r.remove(i);
            }
            None => return Ok(r),
        }
    }
}

/// Repeatedly removes the interior ratio whose merged neighbours have the
/// smallest difficulty ≤ `threshold` (ties to the lowest index) until none is removable.
pub fn prune<F>(ratios: &[f64], oracle: &mut F, threshold: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    prune_from(ratios, oracle, threshold, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    PrependRefine,
    Subtask,
    AppendRefine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    pub ratio: f64,
    pub kind: StageKind,
    /// Position of `ratio` in the schedule's ratio list.
    pub ratio_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub ratios: Vec<f64>,
    pub threshold: f64,
    pub difficulties: Vec<f64>,
    pub prepend_refine: bool,
    pub append_refine: bool,
    pub threshold_met: bool,
}

/// Attaches both refinement stages to a pruned ratio list.
pub fn finalize(ratios: Vec<f64>, threshold: f64, difficulties: Vec<f64>, threshold_met: bool) -> Result<Schedule> {
    let s = Schedule {
        ratios,
        threshold,
        difficulties,
        prepend_refine: true,
        append_refine: true,
        threshold_met,
    };
    s.validate()?;
    Ok(s)
}

fn consecutive_difficulties<F>(ratios: &[f64], oracle: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    ratios.windows(2).map(|w| oracle(w[0], w[1])).collect()
}

/// decompose → prune → finalize.
pub fn plan<F>(oracle: &mut F, threshold: f64, limits: &DecomposeLimits) -> Result<Schedule>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let dec = decompose(oracle, threshold, limits)?;
    let ratios = prune(&dec.ratios, oracle, threshold)?;
    let difficulties = consecutive_difficulties(&ratios, oracle)?;
    finalize(ratios, threshold, difficulties, dec.threshold_met)
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let r = &self.ratios;
        if r.len() < 2 || r[0] != 0.0 || *r.last().unwrap() != 1.0 {
            return Err(Error::Invalid(format!("schedule must start at 0 and end at 1: {r:?}")));
        }
        if r.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid(format!("schedule ratios not strictly increasing: {r:?}")));
        }
        if self.difficulties.len() != r.len() - 1 {
            return Err(Error::Invalid(format!(
                "{} difficulties for {} intervals",
                self.difficulties.len(),
                r.len() - 1
            )));
        }
        check_threshold(self.threshold).map_err(|e| Error::Invalid(e.to_string()))?;
        if self.threshold_met && self.difficulties.iter().any(|&d| d > self.threshold) {
            return Err(Error::Invalid("threshold_met set but a difficulty exceeds the threshold".into()));
        }
        Ok(())
    }

    pub fn subtask_count(&self) -> usize {
        self.ratios.len() - 1
    }

    /// Execution order: [refine@0], r_1 .. r_n, [refine@1].
    pub fn stages(&self) -> Vec<Stage> {
        let mut out = Vec::new();
        let mut push = |ratio_index: usize, kind| {
            out.push(Stage {
                index: out.len(),
                ratio: self.ratios[ratio_index],
                kind,
                ratio_index,
            })
        };
        if self.prepend_refine {
            push(0, StageKind::PrependRefine);
        }
        for i in 1..self.ratios.len() {
            push(i, StageKind::Subtask);
        }
        if self.append_refine {
            push(self.ratios.len() - 1, StageKind::AppendRefine);
        }
        out
    }

    /// Keeps every ratio up to `ratios[keep]` and re-plans `[ratios[keep], 1]` under `threshold`.
    ///
    /// The new tail reuses the midpoint grid of a fresh `[0, 1]` bisection, so an
    /// unchanged threshold reproduces the schedule.
    pub fn adjust_tail<F>(&self, keep: usize, threshold: f64, oracle: &mut F, limits: &DecomposeLimits) -> Result<Schedule>
    where
        F: FnMut(f64, f64) -> Result<f64>,
    {
        check_threshold(threshold)?;
        if keep >= self.ratios.len() {
            return Err(Error::Rejected(format!("ratio index {keep} outside schedule")));
        }
        if threshold == self.threshold || keep + 1 == self.ratios.len() {
            return Ok(Schedule {
                threshold,
                ..self.clone()
            });
        }
        let lo = self.ratios[keep];
        let full = decompose(oracle, threshold, limits)?;
        let grid: Vec<f64> = full.ratios.into_iter().filter(|&r| r > lo).collect();
        let head = decompose_interval(oracle, lo, grid[0], threshold, limits)?;
        let (tail, tail_met) = {
            let mut t = head.ratios[1..].to_vec();
            t.extend_from_slice(&grid[1..]);
            (t, head.threshold_met && full.threshold_met)
        };
        let mut ratios = self.ratios[..=keep].to_vec();
        ratios.extend(tail);
        let ratios = prune_from(&ratios, oracle, threshold, keep)?;
        let mut difficulties = self.difficulties[..keep].to_vec();
        difficulties.extend(consecutive_difficulties(&ratios[keep..], oracle)?);
        let met = tail_met && difficulties.iter().all(|&d| d <= threshold);
        let s = Schedule {
            ratios,
            threshold,
            difficulties,
            prepend_refine: self.prepend_refine,
            append_refine: self.append_refine,
            threshold_met: met,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "threshold {:?}", self.threshold);
        let _ = writeln!(s, "threshold_met {}", self.threshold_met);
        let _ = writeln!(s, "prepend_refine {}", self.prepend_refine);
        let _ = writeln!(s, "append_refine {}", self.append_refine);
        let _ = writeln!(s, "ratios {}", join(&self.ratios));
        let _ = writeln!(s, "difficulties {}", join(&self.difficulties));
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Schedule> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut threshold = None;
        let mut met = None;
        let mut pre = None;
        let mut app = None;
        let mut ratios = None;
        let mut diffs = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let reals = || {
                rest.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| perr(i + 1, format!("{t}: {e}"))))
                    .collect::<Result<Vec<_>>>()
            };
            let flag = || rest.trim().parse::<bool>().map_err(|e| perr(i + 1, format!("{key}: {e}")));
            match key {
                "threshold" => threshold = Some(rest.trim().parse::<f64>().map_err(|e| perr(i + 1, e.to_string()))?),
                "threshold_met" => met = Some(flag()?),
                "prepend_refine" => pre = Some(flag()?),
                "append_refine" => app = Some(flag()?),
                "ratios" => ratios = Some(reals()?),
                "difficulties" => diffs = Some(reals()?),
                other => return Err(perr(i + 1, format!("unknown key {other}"))),
            }
        }
        let missing = |k: &str| perr(0, format!("missing key {k}"));
        let s = Schedule {
            ratios: ratios.ok_or_else(|| missing("ratios"))?,
            threshold: threshold.ok_or_else(|| missing("threshold"))?,
            difficulties: diffs.ok_or_else(|| missing("difficulties"))?,
            prepend_refine: pre.ok_or_else(|| missing("prepend_refine"))?,
            append_refine: app.ok_or_else(|| missing("append_refine"))?,
            threshold_met: met.ok_or_else(|| missing("threshold_met"))?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Schedule> {
        Self::from_text(&crate::io::read_to_string(path)?, path)
    }
}

/// Named subtask-count targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Texture,
    Geometry,
}

impl Preset {
    pub fn target_subtasks(self) -> usize {
        match self {
            Preset::Texture => 4,
            Preset::Geometry => 8,
        }
    }
}

/// Bisects the threshold (in log space) for the schedule whose subtask count is
/// closest to `target`, preferring the larger threshold on ties.
pub fn plan_for_count<F>(oracle: &mut F, target: usize, limits: &DecomposeLimits) -> Result<Schedule>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if target == 0 {
        return Err(Error::Invalid("target subtask count must be >= 1".into()));
    }
    let d01 = oracle(0.0, 1.0)?;
    if d01 <= 0.0 {
        return plan(oracle, 1.0, limits);
    }
    let mut hi = d01;
    let mut best = plan(oracle, hi, limits)?;
    if target == 1 {
        return Ok(best);
    }
    let mut lo = d01 * 1e-4;
    let score = |s: &Schedule| s.subtask_count().abs_diff(target);
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        let n = match plan(oracle, mid, limits) {
            Ok(s) => {
                let n = s.subtask_count();
                let better = score(&s) < score(&best) || (score(&s) == score(&best) && s.threshold > best.threshold);
                if better {
                    best = s;
                }
                n
            }
            Err(Error::TooManySubtasks { .. }) => usize::MAX,
            Err(e) => return Err(e),
        };
        if n == target {
            break;
        }
        if n > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok(best)
}

pub fn plan_preset<F>(oracle: &mut F, preset: Preset, limits: &DecomposeLimits) -> Result<Schedule>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    plan_for_count(oracle, preset.target_subtasks(), limits)
}
