use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub patience: usize,
    pub rel_tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 200,
            patience: 400,
            rel_tolerance: 1e-4,
        }
    }
}

/// Running-mean stall detector. The convergence flag latches.
///
/// `best_mean` is only tracked once the window is full, so a constant stream
/// converges at exactly `window + patience` observations.
#[derive(Clone, Debug)]
pub struct LossWindow {
    cfg: ConvergenceConfig,
    values: VecDeque<f64>,
    count: u64,
    best_mean: Option<f64>,
    stall_count: usize,
    converged: bool,
}

impl LossWindow {
    pub fn new(cfg: ConvergenceConfig) -> Result<Self> {
        if cfg.window == 0 || !(cfg.rel_tolerance >= 0.0) {
            return Err(Error::Invalid(format!("invalid convergence config {cfg:?}")));
        }
        Ok(Self {
            cfg,
            values: VecDeque::with_capacity(cfg.window),
            count: 0,
            best_mean: None,
            stall_count: 0,
            converged: false,
        })
    }

    pub fn config(&self) -> &ConvergenceConfig {
        &self.cfg
    }

    /// Observes one loss; returns whether the window has converged.
    pub fn update(&mut self, loss: f64) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss));
        }
        if loss < 0.0 {
            return Err(Error::Invalid(format!("negative loss {loss}")));
        }
        if self.values.len() == self.cfg.window {
            self.values.pop_front();
        }
        self.values.push_back(loss);
        self.count += 1;
        if self.values.len() == self.cfg.window {
            let mean = self.running_mean();
            match self.best_mean {
                Some(best) if mean >= best - self.cfg.rel_tolerance * best => self.stall_count += 1,
                _ => {
                    self.best_mean = Some(mean);
                    self.stall_count = 0;
                }
            }
        }
        if self.stall_count >= self.cfg.patience {
            self.converged = true;
        }
        Ok(self.converged)
    }

    /// Mean over the last `min(window, count)` values; 0 when empty.
    pub fn running_mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn best_mean(&self) -> Option<f64> {
        self.best_mean
    }

    pub fn stall_count(&self) -> usize {
        self.stall_count
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn converged(&self) -> bool {
        self.converged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_converges_at_window_plus_patience() {
        let mut w = LossWindow::new(ConvergenceConfig::default()).unwrap();
        for i in 1..=600 {
            let c = w.update(0.25).unwrap();
            assert_eq!(c, i == 600, "iteration {i}");
        }
    }

    #[test]
    fn decreasing_stream_never_converges() {
        let mut w = LossWindow::new(ConvergenceConfig::default()).unwrap();
        for i in 0..5000 {
            assert!(!w.update(1.0 / (1.0 + i as f64)).unwrap());
        }
    }

    #[test]
    fn latch_survives_a_spike() {
        let cfg = ConvergenceConfig {
            window: 4,
            patience: 3,
            rel_tolerance: 1e-4,
        };
        let mut w = LossWindow::new(cfg).unwrap();
        while !w.update(1.0).unwrap() {}
        assert!(w.update(100.0).unwrap());
        assert!(w.update(0.0).unwrap());
    }

    #[test]
    fn running_mean_uses_partial_window() {
        let mut w = LossWindow::new(ConvergenceConfig::default()).unwrap();
        w.update(1.0).unwrap();
        w.update(3.0).unwrap();
        assert_eq!(w.running_mean(), 2.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut w = LossWindow::new(ConvergenceConfig::default()).unwrap();
        assert!(matches!(w.update(f64::NAN), Err(Error::NonFiniteLoss(_))));
        assert!(matches!(w.update(f64::INFINITY), Err(Error::NonFiniteLoss(_))));
    }
}
