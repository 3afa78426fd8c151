//! Noise schedule: cumulative signal levels over training timesteps and the
//! strided subset walked at inference time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_INFERENCE_STEPS: usize = 50;
pub const DEFAULT_FINAL_ALPHA_BAR: f64 = 1e-4;

/// Monotone-decreasing cumulative signal levels `alpha_bar[t]` over the
/// training timesteps, with `alpha_bar[0] = 1` (the data end).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    num_inference_steps: usize,
}

/// The parameters a schedule was built from; recorded in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub train_steps: usize,
    pub num_inference_steps: usize,
    pub final_alpha_bar: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            train_steps: DEFAULT_TRAIN_STEPS,
            num_inference_steps: DEFAULT_INFERENCE_STEPS,
            final_alpha_bar: DEFAULT_FINAL_ALPHA_BAR,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.train_steps, self.final_alpha_bar, self.num_inference_steps)
    }
}

impl NoiseSchedule {
    /// Linear interpolation of `alpha_bar` from 1 at index 0 down to
    /// `final_alpha_bar` at the last training index.
    pub fn linear(
        train_steps: usize,
        final_alpha_bar: f64,
        num_inference_steps: usize,
    ) -> Result<Self> {
        if train_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 training steps"));
        }
        if !(final_alpha_bar > 0.0 && final_alpha_bar < 1.0) {
            return Err(Error::invalid(format!(
                "final_alpha_bar must lie in (0, 1), got {final_alpha_bar}"
            )));
        }
        let t = train_steps as f64;
        let alpha_bar = (0..train_steps)
            .map(|i| 1.0 - (i as f64 / (t - 1.0)) * (1.0 - final_alpha_bar))
            .collect();
        Self::from_alpha_bar(alpha_bar, num_inference_steps)
    }

    /// Validate and wrap an explicit `alpha_bar` sequence.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>, num_inference_steps: usize) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::invalid("alpha_bar must have at least 2 entries"));
        }
        if alpha_bar[0] <= 0.99 {
            return Err(Error::invalid(format!(
                "alpha_bar[0] must be near-noiseless (> 0.99), got {}",
                alpha_bar[0]
            )));
        }
        for (i, w) in alpha_bar.windows(2).enumerate() {
            if !(w[0] > 0.0 && w[0] <= 1.0 && w[1] > 0.0 && w[1] <= 1.0) {
                return Err(Error::invalid(format!(
                    "alpha_bar values must lie in (0, 1]; offending index {i}"
                )));
            }
            if w[1] >= w[0] {
                return Err(Error::invalid(format!(
                    "alpha_bar must be strictly decreasing; violated at index {}",
                    i + 1
                )));
            }
        }
        if num_inference_steps == 0 {
            return Err(Error::invalid("num_inference_steps must be >= 1"));
        }
        if num_inference_steps > alpha_bar.len() - 1 {
            return Err(Error::invalid(format!(
                "num_inference_steps {} exceeds train steps {} - 1",
                num_inference_steps,
                alpha_bar.len()
            )));
        }
        Ok(NoiseSchedule {
            alpha_bar,
            num_inference_steps,
        })
    }

    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn num_inference_steps(&self) -> usize {
        self.num_inference_steps
    }

    pub fn alpha_bar(&self, index: usize) -> Result<f64> {
        self.alpha_bar
            .get(index)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "schedule index {index} out of bounds (train steps {})",
                    self.alpha_bar.len()
                ))
            })
    }

    /// The parameters describing this schedule, as recorded in manifests.
    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            train_steps: self.train_steps(),
            num_inference_steps: self.num_inference_steps,
            final_alpha_bar: *self.alpha_bar.last().expect("validated non-empty"),
        }
    }

    /// The strictly decreasing index path walked at inference: from the
    /// noisiest index down to 0, `num_inference_steps + 1` points. The final
    /// index is 0 where `alpha_bar = 1`, so the last update is an exact
    /// projection onto the predicted sample.
    pub fn inference_indices(&self) -> Vec<usize> {
        let top = (self.alpha_bar.len() - 1) as f64;
        let steps = self.num_inference_steps;
        (0..=steps)
            .map(|k| (top * (1.0 - k as f64 / steps as f64)).round() as usize)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_endpoints() {
        let s = NoiseSchedule::linear(1000, 1e-4, 50).unwrap();
        assert_eq!(s.train_steps(), 1000);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!((s.alpha_bar(999).unwrap() - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn linear_schedule_strictly_decreasing() {
        let s = NoiseSchedule::linear(1000, 1e-4, 50).unwrap();
        for i in 1..s.train_steps() {
            assert!(s.alpha_bar(i).unwrap() < s.alpha_bar(i - 1).unwrap());
        }
    }

    #[test]
    fn inference_indices_cover_both_ends() {
        let s = NoiseSchedule::linear(1000, 1e-4, 50).unwrap();
        let idx = s.inference_indices();
        assert_eq!(idx.len(), 51);
        assert_eq!(idx[0], 999);
        assert_eq!(*idx.last().unwrap(), 0);
        for w in idx.windows(2) {
            assert!(w[1] < w[0], "indices must strictly decrease: {:?}", w);
        }
    }

    #[test]
    fn inference_indices_handle_dense_stride() {
        let s = NoiseSchedule::linear(10, 1e-3, 9).unwrap();
        let idx = s.inference_indices();
        assert_eq!(idx, vec![9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(NoiseSchedule::linear(1, 1e-4, 1).is_err());
        assert!(NoiseSchedule::linear(100, 0.0, 10).is_err());
        assert!(NoiseSchedule::linear(100, 1.0, 10).is_err());
        assert!(NoiseSchedule::linear(100, 1e-4, 0).is_err());
        assert!(NoiseSchedule::linear(100, 1e-4, 100).is_err());
        // non-monotone
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.6], 2).is_err());
        // out of range
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0], 2).is_err());
        // noisy head
        assert!(NoiseSchedule::from_alpha_bar(vec![0.9, 0.5, 0.1], 2).is_err());
    }

    #[test]
    fn out_of_bounds_index_is_error() {
        let s = NoiseSchedule::linear(100, 1e-4, 10).unwrap();
        assert!(s.alpha_bar(100).is_err());
    }
}
