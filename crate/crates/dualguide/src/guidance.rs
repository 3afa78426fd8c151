//! Classifier-free guidance combinators for text, single-image, and
//! dual-image (positive/negative) conditioning.
//!
//! The combinators are pure functions over per-branch noise predictions.
//! The dual form extrapolates from the unconditional prediction through the
//! text branch, adds the positive-image branch, and *subtracts* the
//! negative-image branch:
//!
//! ```text
//! eps_hat = eps_u + w_text * (eps_t - eps_u)
//!                 + w_im_pos * (eps_tp - eps_t)
//!                 - w_im_neg * (eps_tpn - eps_tp)
//! ```
//!
//! The negative scale is stored as a nonnegative magnitude; the subtraction
//! is applied here and nowhere else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guidance scales for the three conditioning branches.
///
/// `w_im_neg` is a nonnegative magnitude; the combinator owns the sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    pub w_text: f64,
    pub w_im_pos: f64,
    pub w_im_neg: f64,
}

impl GuidanceWeights {
    pub fn new(w_text: f64, w_im_pos: f64, w_im_neg: f64) -> Result<Self> {
        let w = GuidanceWeights {
            w_text,
            w_im_pos,
            w_im_neg,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn text_only(w_text: f64) -> Result<Self> {
        Self::new(w_text, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_text", self.w_text),
            ("w_im_pos", self.w_im_pos),
            ("w_im_neg", self.w_im_neg),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("guidance weight {name} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::invalid(format!(
                    "guidance weight {name} must be a nonnegative magnitude, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Condition handles for the branches of one guided denoiser evaluation.
///
/// The negative image branch nests on the positive one, so a negative
/// condition without a positive condition is unrepresentable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet<C> {
    text: C,
    image_pos: Option<C>,
    image_neg: Option<C>,
}

impl<C> ConditionSet<C> {
    /// Text conditioning only (standard CFG).
    pub fn text_only(text: C) -> Self {
        ConditionSet {
            text,
            image_pos: None,
            image_neg: None,
        }
    }

    /// Text plus one positive image prompt.
    pub fn with_positive(text: C, image_pos: C) -> Self {
        ConditionSet {
            text,
            image_pos: Some(image_pos),
            image_neg: None,
        }
    }

    /// Text plus positive and negative image prompts.
    pub fn dual(text: C, image_pos: C, image_neg: C) -> Self {
        ConditionSet {
            text,
            image_pos: Some(image_pos),
            image_neg: Some(image_neg),
        }
    }

    pub fn text(&self) -> &C {
        &self.text
    }

    pub fn image_pos(&self) -> Option<&C> {
        self.image_pos.as_ref()
    }

    pub fn image_neg(&self) -> Option<&C> {
        self.image_neg.as_ref()
    }

    pub fn has_positive(&self) -> bool {
        self.image_pos.is_some()
    }

    pub fn has_negative(&self) -> bool {
        self.image_neg.is_some()
    }
}

/// Per-branch noise predictions at one diffusion step.
///
/// Optional branches mirror the `ConditionSet` they were evaluated for; all
/// present vectors share one nonzero shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictionQuad {
    pub eps_uncond: Vec<f64>,
    pub eps_text: Vec<f64>,
    pub eps_text_pos: Option<Vec<f64>>,
    pub eps_text_pos_neg: Option<Vec<f64>>,
}

impl NoisePredictionQuad {
    pub fn dim(&self) -> usize {
        self.eps_uncond.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.eps_uncond.len();
        if dim == 0 {
            return Err(Error::invalid("zero-length noise prediction vectors are rejected"));
        }
        if self.eps_text.len() != dim {
            return Err(Error::invalid(format!(
                "shape mismatch: eps_text has {} elements, eps_uncond has {}",
                self.eps_text.len(),
                dim
            )));
        }
        if let Some(p) = &self.eps_text_pos {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "shape mismatch: eps_text_pos has {} elements, expected {}",
                    p.len(),
                    dim
                )));
            }
        }
        if let Some(n) = &self.eps_text_pos_neg {
            if n.len() != dim {
                return Err(Error::invalid(format!(
                    "shape mismatch: eps_text_pos_neg has {} elements, expected {}",
                    n.len(),
                    dim
                )));
            }
            if self.eps_text_pos.is_none() {
                return Err(Error::invalid(
                    "eps_text_pos_neg present without eps_text_pos: the negative branch nests on the positive one",
                ));
            }
        }
        Ok(())
    }
}

/// Standard text CFG: `eps_u + w_text * (eps_t - eps_u)`.
pub fn combine_text_cfg(quad: &NoisePredictionQuad, w_text: f64) -> Result<Vec<f64>> {
    quad.validate()?;
    check_finite_weight("w_text", w_text)?;
    Ok(quad
        .eps_uncond
        .iter()
        .zip(&quad.eps_text)
        .map(|(&u, &t)| u + w_text * (t - u))
        .collect())
}

/// CFG with one text and one image prompt:
/// `eps_u + w_text * (eps_t - eps_u) + w_im_pos * (eps_tp - eps_t)`.
pub fn combine_single_image_cfg(
    quad: &NoisePredictionQuad,
    w_text: f64,
    w_im_pos: f64,
) -> Result<Vec<f64>> {
    quad.validate()?;
    check_finite_weight("w_text", w_text)?;
    check_finite_weight("w_im_pos", w_im_pos)?;
    let pos = quad
        .eps_text_pos
        .as_ref()
        .ok_or_else(|| Error::invalid("combine_single_image_cfg: eps_text_pos branch missing"))?;
    Ok(quad
        .eps_uncond
        .iter()
        .zip(&quad.eps_text)
        .zip(pos)
        .map(|((&u, &t), &p)| u + w_text * (t - u) + w_im_pos * (p - t))
        .collect())
}

/// Dual image-prompt CFG with a subtracted negative branch.
pub fn combine_dual_cfg(quad: &NoisePredictionQuad, weights: &GuidanceWeights) -> Result<Vec<f64>> {
    quad.validate()?;
    weights.validate()?;
    let pos = quad
        .eps_text_pos
        .as_ref()
        .ok_or_else(|| Error::invalid("combine_dual_cfg: eps_text_pos branch missing"))?;
    let neg = quad
        .eps_text_pos_neg
        .as_ref()
        .ok_or_else(|| Error::invalid("combine_dual_cfg: eps_text_pos_neg branch missing"))?;
    Ok(quad
        .eps_uncond
        .iter()
        .zip(&quad.eps_text)
        .zip(pos)
        .zip(neg)
        .map(|(((&u, &t), &p), &n)| {
            u + weights.w_text * (t - u) + weights.w_im_pos * (p - t) - weights.w_im_neg * (n - p)
        })
        .collect())
}

/// Dispatch on branch presence: text-only, single-image, or dual CFG.
///
/// A nonzero weight for an absent branch is a configuration error rather
/// than something to silently drop.
pub fn combine_auto(quad: &NoisePredictionQuad, weights: &GuidanceWeights) -> Result<Vec<f64>> {
    match (&quad.eps_text_pos, &quad.eps_text_pos_neg) {
        (Some(_), Some(_)) => combine_dual_cfg(quad, weights),
        (Some(_), None) => {
            if weights.w_im_neg != 0.0 {
                return Err(Error::invalid(
                    "w_im_neg is nonzero but the negative image branch is absent",
                ));
            }
            combine_single_image_cfg(quad, weights.w_text, weights.w_im_pos)
        }
        (None, _) => {
            if weights.w_im_pos != 0.0 || weights.w_im_neg != 0.0 {
                return Err(Error::invalid(
                    "image guidance weights are nonzero but no image branch is present",
                ));
            }
            combine_text_cfg(quad, weights.w_text)
        }
    }
}

/// Denoiser evaluations needed per diffusion step: 2 for text-only CFG,
/// one more per image prompt (3 with a positive image, 4 with both).
pub fn required_passes<C>(conditions: &ConditionSet<C>) -> usize {
    2 + conditions.has_positive() as usize + conditions.has_negative() as usize
}

fn check_finite_weight(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("guidance weight {name} is not finite")))
    }
}
