//! Weighted real/synthetic cross-entropy:
//!
//! ```text
//! loss = lambda * sum_real CE + (1 - lambda) * sum_synth CE
//! ```
//!
//! Batch-half sums are the default; a `mean` reduction divides each half by
//! its example count (learning-rate tuning absorbs the difference).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

/// Numerically stable cross-entropy of one logit vector against a class
/// index: `logsumexp(logits) - logits[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::invalid("cross_entropy: empty logits"));
    }
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "cross_entropy: target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    Ok(max + sum_exp.ln() - logits[target])
}

pub fn weighted_loss(
    real_logits: &[Vec<f64>],
    real_targets: &[usize],
    synth_logits: &[Vec<f64>],
    synth_targets: &[usize],
    lambda_weight: f64,
    reduction: LossReduction,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda_weight) {
        return Err(Error::invalid(format!(
            "lambda must lie in [0, 1], got {lambda_weight}"
        )));
    }
    if real_logits.len() != real_targets.len() {
        return Err(Error::invalid(format!(
            "real logits/targets misaligned: {} vs {}",
            real_logits.len(),
            real_targets.len()
        )));
    }
    if synth_logits.len() != synth_targets.len() {
        return Err(Error::invalid(format!(
            "synthetic logits/targets misaligned: {} vs {}",
            synth_logits.len(),
            synth_targets.len()
        )));
    }
    let real = half_loss(real_logits, real_targets, reduction)?;
    let synth = half_loss(synth_logits, synth_targets, reduction)?;
    Ok(lambda_weight * real + (1.0 - lambda_weight) * synth)
}

fn half_loss(logits: &[Vec<f64>], targets: &[usize], reduction: LossReduction) -> Result<f64> {
    let mut total = 0.0;
    for (l, &t) in logits.iter().zip(targets) {
        total += cross_entropy(l, t)?;
    }
    Ok(match reduction {
        LossReduction::Sum => total,
        LossReduction::Mean => total / (logits.len().max(1) as f64),
    })
}
