//! The 2D editing oracle: a synthetic editor with a controllable feasible
//! output space, and a client for an external editing service.

mod remote;
mod synthetic;

pub use remote::{RemoteEditor, RemoteEditorConfig, DEFAULT_GUIDANCE};
pub use synthetic::{ground_truth_render, FosParams, SyntheticEditor, SyntheticEditorConfig};

use serde::{Deserialize, Serialize};

use crate::embedding::Ratio;
use crate::error::Result;
use crate::image::Image;

/// An image editor conditioned on the subtask ratio.
pub trait Editor: Send + Sync {
    /// Edits `input` (the image of view `view_id`) toward ratio `r` with blend strength `strength`.
    fn edit(&self, input: &Image, view_id: usize, r: Ratio, strength: f64) -> Result<Image>;

    /// True if repeated calls with equal arguments return equal images.
    fn is_deterministic(&self) -> bool {
        true
    }
}

impl<E: Editor + ?Sized> Editor for std::sync::Arc<E> {
    fn edit(&self, input: &Image, view_id: usize, r: Ratio, strength: f64) -> Result<Image> {
        (**self).edit(input, view_id, r, strength)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Editing strength annealed linearly from `strength_max` to `strength_min` over stage progress.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthSchedule {
    pub strength_max: f64,
    pub strength_min: f64,
}

impl Default for StrengthSchedule {
    fn default() -> Self {
        Self {
            strength_max: 0.85,
            strength_min: 0.45,
        }
    }
}

impl StrengthSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b > 0.0 && b <= 1.0;
        if !ok(self.strength_max) || !ok(self.strength_min) || self.strength_min > self.strength_max {
            return Err(crate::Error::Invalid(format!(
                "strength schedule needs 0 < min <= max <= 1, got [{}, {}]",
                self.strength_min, self.strength_max
            )));
        }
        Ok(())
    }

    /// Strength at progress `u` in `[0, 1]`.
    pub fn at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let b = self.strength_max - (self.strength_max - self.strength_min) * u;
        b.clamp(self.strength_min, self.strength_max)
    }
}

/// `input + strength * (edited - input)`, clamped; `strength == 1` returns `edited`.
pub(crate) fn blend(input: &Image, edited: Image, strength: f64) -> Result<Image> {
    input.ensure_same_size(&edited)?;
    if strength == 1.0 {
        let mut out = edited;
        out.clamp01();
        return Ok(out);
    }
    let data = input
        .data()
        .iter()
        .zip(edited.data())
        .map(|(a, e)| (a + strength * (e - a)).clamp(0.0, 1.0))
        .collect();
    Image::from_raw(input.width(), input.height(), data)
}

pub(crate) fn check_strength(strength: f64) -> Result<()> {
    if strength > 0.0 && strength <= 1.0 {
        Ok(())
    } else {
        Err(crate::Error::Invalid(format!("strength {strength} outside (0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strength_is_monotone_and_bounded() {
        let s = StrengthSchedule::default();
        assert_eq!(s.at(0.0), 0.85);
        assert!((s.at(1.0) - 0.45).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let b = s.at(i as f64 / 100.0);
            assert!(b <= prev && (0.45..=0.85).contains(&b));
            prev = b;
        }
    }
}
