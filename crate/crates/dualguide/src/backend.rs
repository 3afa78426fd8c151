//! Denoiser backend abstraction and the analytic Gaussian backend.
//!
//! For Gaussian data `N(mu, sigma^2 I)` the noised marginal at signal level
//! `alpha_bar` is `N(sqrt(alpha_bar) mu, (alpha_bar sigma^2 + 1 - alpha_bar) I)`,
//! so the exact noise prediction has a closed form. That makes every guidance
//! formula verifiable end to end without any learned model.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::guidance::{required_passes, ConditionSet, NoisePredictionQuad};
use crate::schedule::NoiseSchedule;

/// A noisy sample plus its position in the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t_index: usize,
}

impl DiffusionState {
    pub fn new(x: Vec<f64>, t_index: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("diffusion state must be non-empty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("diffusion state contains non-finite values"));
        }
        Ok(DiffusionState { x, t_index })
    }
}

/// Isotropic Gaussian condition: the analytic stand-in for a conditioning
/// branch (text, text+positive, text+positive+negative, or unconditional).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCondition {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianCondition {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("condition mean must be non-empty"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("condition mean contains non-finite values"));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "condition variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(GaussianCondition { mean, variance })
    }

    /// Point-mass data distribution.
    pub fn point(mean: Vec<f64>) -> Result<Self> {
        Self::new(mean, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moments of the noised marginal at signal level `alpha_bar`.
    pub fn noised_moments(&self, alpha_bar: f64) -> (Vec<f64>, f64) {
        let scale = alpha_bar.sqrt();
        let mean = self.mean.iter().map(|m| scale * m).collect();
        let variance = alpha_bar * self.variance + 1.0 - alpha_bar;
        (mean, variance)
    }

    /// Log-density of the noised marginal, up to the normalizing constant
    /// shared across `x`. Used by the finite-difference score oracle.
    pub fn noised_log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid("log-density dimension mismatch"));
        }
        let (mean, variance) = self.noised_moments(alpha_bar);
        if variance <= 0.0 {
            return Err(Error::invalid(
                "noised marginal is degenerate (zero variance)",
            ));
        }
        let q: f64 = x
            .iter()
            .zip(&mean)
            .map(|(xi, mi)| (xi - mi) * (xi - mi))
            .sum();
        Ok(-0.5 * q / variance)
    }
}

/// Exact epsilon-parameterized score of the noised Gaussian marginal:
///
/// ```text
/// eps(x) = sqrt(1 - ab) * (x - sqrt(ab) * mu) / (ab * sigma^2 + 1 - ab)
/// ```
pub fn analytic_eps(x: &[f64], alpha_bar_t: f64, cond: &GaussianCondition) -> Result<Vec<f64>> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha_bar must lie in (0, 1], got {alpha_bar_t}"
        )));
    }
    if x.len() != cond.dim() {
        return Err(Error::invalid(format!(
            "analytic_eps dimension mismatch: x has {}, condition has {}",
            x.len(),
            cond.dim()
        )));
    }
    let denom = alpha_bar_t * cond.variance + 1.0 - alpha_bar_t;
    if denom <= 0.0 {
        return Err(Error::invalid(
            "degenerate marginal: alpha_bar = 1 with zero-variance condition",
        ));
    }
    let signal = alpha_bar_t.sqrt();
    let noise = (1.0 - alpha_bar_t).sqrt();
    Ok(x.iter()
        .zip(&cond.mean)
        .map(|(xi, mi)| noise * (xi - signal * mi) / denom)
        .collect())
}

/// A denoiser: maps a noisy state and branch conditions to per-branch noise
/// predictions, evaluating exactly the branches the `ConditionSet` demands.
pub trait DenoiserBackend {
    type Condition;

    fn evaluate(
        &self,
        state: &DiffusionState,
        conditions: &ConditionSet<Self::Condition>,
    ) -> Result<NoisePredictionQuad>;

    /// Dimension of the latent the backend denoises.
    fn latent_dim(&self) -> usize;
}

/// Analytic Gaussian backend over a fixed schedule, with forward-pass
/// instrumentation.
///
/// The unconditional branch is fixed at construction; the conditional
/// branches come from the `ConditionSet` of each call.
pub struct AnalyticBackend {
    uncond: GaussianCondition,
    schedule: NoiseSchedule,
    branch_evals: AtomicU64,
    evaluate_calls: AtomicU64,
    eval_log: Option<Mutex<Vec<usize>>>,
}

impl AnalyticBackend {
    pub fn new(uncond: GaussianCondition, schedule: NoiseSchedule) -> Self {
        AnalyticBackend {
            uncond,
            schedule,
            branch_evals: AtomicU64::new(0),
            evaluate_calls: AtomicU64::new(0),
            eval_log: None,
        }
    }

    /// Record the number of branch evaluations of every `evaluate` call.
    pub fn with_eval_log(mut self) -> Self {
        self.eval_log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn uncond(&self) -> &GaussianCondition {
        &self.uncond
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Total denoiser forward passes (branch evaluations) so far.
    pub fn forward_passes(&self) -> u64 {
        self.branch_evals.load(Ordering::Relaxed)
    }

    pub fn evaluate_calls(&self) -> u64 {
        self.evaluate_calls.load(Ordering::Relaxed)
    }

    /// Per-call branch counts, if logging was enabled.
    pub fn eval_log(&self) -> Vec<usize> {
        match &self.eval_log {
            Some(log) => log.lock().unwrap().clone(),
            None => Vec::new(),
        }
    }

    pub fn reset_counters(&self) {
        self.branch_evals.store(0, Ordering::Relaxed);
        self.evaluate_calls.store(0, Ordering::Relaxed);
        if let Some(log) = &self.eval_log {
            log.lock().unwrap().clear();
        }
    }

    fn eval_branch(&self, x: &[f64], alpha_bar: f64, cond: &GaussianCondition) -> Result<Vec<f64>> {
        self.branch_evals.fetch_add(1, Ordering::Relaxed);
        analytic_eps(x, alpha_bar, cond)
    }
}

impl DenoiserBackend for AnalyticBackend {
    type Condition = GaussianCondition;

    fn evaluate(
        &self,
        state: &DiffusionState,
        conditions: &ConditionSet<GaussianCondition>,
    ) -> Result<NoisePredictionQuad> {
        self.evaluate_calls.fetch_add(1, Ordering::Relaxed);
        let alpha_bar = self.schedule.alpha_bar(state.t_index)?;
        let quad = NoisePredictionQuad {
            eps_uncond: self.eval_branch(&state.x, alpha_bar, &self.uncond)?,
            eps_text: self.eval_branch(&state.x, alpha_bar, conditions.text())?,
            eps_text_pos: conditions
                .image_pos()
                .map(|c| self.eval_branch(&state.x, alpha_bar, c))
                .transpose()?,
            eps_text_pos_neg: conditions
                .image_neg()
                .map(|c| self.eval_branch(&state.x, alpha_bar, c))
                .transpose()?,
        };
        if let Some(log) = &self.eval_log {
            log.lock().unwrap().push(required_passes(conditions));
        }
        quad.validate()?;
        Ok(quad)
    }

    fn latent_dim(&self) -> usize {
        self.uncond.dim()
    }
}
