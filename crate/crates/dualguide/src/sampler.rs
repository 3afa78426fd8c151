//! Deterministic DDIM sampling under guided noise predictions, plus the
//! tilted-distribution oracle for Gaussian branch conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backend::{DenoiserBackend, DiffusionState, GaussianCondition};
use crate::error::{Error, Result};
use crate::guidance::{combine_auto, ConditionSet, GuidanceWeights, NoisePredictionQuad};
use crate::schedule::NoiseSchedule;

/// Core DDIM update from signal level `ab_t` to `ab_next`:
/// `x0 = (x - sqrt(1 - ab_t) eps) / sqrt(ab_t)`, then
/// `x' = sqrt(ab_next) x0 + sqrt(1 - ab_next) eps`.
pub fn ddim_update(x: &[f64], eps_hat: &[f64], ab_t: f64, ab_next: f64) -> Result<Vec<f64>> {
    if ab_t == 0.0 {
        return Err(Error::invalid("ddim update singular: alpha_bar_t = 0"));
    }
    if x.len() != eps_hat.len() {
        return Err(Error::invalid(format!(
            "ddim update shape mismatch: x has {}, eps has {}",
            x.len(),
            eps_hat.len()
        )));
    }
    let signal_t = ab_t.sqrt();
    let noise_t = (1.0 - ab_t).sqrt();
    let signal_n = ab_next.sqrt();
    let noise_n = (1.0 - ab_next).sqrt();
    Ok(x.iter()
        .zip(eps_hat)
        .map(|(&xi, &ei)| {
            let x0 = (xi - noise_t * ei) / signal_t;
            signal_n * x0 + noise_n * ei
        })
        .collect())
}

/// One deterministic reverse step; time moves toward index 0.
pub fn ddim_step(
    state: &DiffusionState,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    next_index: usize,
) -> Result<DiffusionState> {
    if next_index >= state.t_index {
        return Err(Error::invalid(format!(
            "ddim step must move toward 0: next index {} >= current {}",
            next_index, state.t_index
        )));
    }
    let ab_t = schedule.alpha_bar(state.t_index)?;
    let ab_next = schedule.alpha_bar(next_index)?;
    let x = ddim_update(&state.x, eps_hat, ab_t, ab_next)?;
    Ok(DiffusionState {
        x,
        t_index: next_index,
    })
}

/// Run the full guided reverse process: draw `x_T` from a seeded standard
/// normal, then iterate evaluate -> combine -> step down the inference path.
/// Deterministic given (seed, schedule, weights, conditions, backend).
pub fn sample<B: DenoiserBackend>(
    backend: &B,
    conditions: &ConditionSet<B::Condition>,
    weights: &GuidanceWeights,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_with_combiner(backend, conditions, weights, schedule, seed, combine_auto)
}

/// Sampler with a pluggable guidance combinator. Used by the verification
/// suite to demonstrate that a sign-flipped negative term is caught by the
/// moment oracle.
pub(crate) fn sample_with_combiner<B, F>(
    backend: &B,
    conditions: &ConditionSet<B::Condition>,
    weights: &GuidanceWeights,
    schedule: &NoiseSchedule,
    seed: u64,
    combine: F,
) -> Result<Vec<f64>>
where
    B: DenoiserBackend,
    F: Fn(&NoisePredictionQuad, &GuidanceWeights) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = backend.latent_dim();
    if dim == 0 {
        return Err(Error::invalid("backend latent dimension is zero"));
    }
    let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let indices = schedule.inference_indices();
    let mut state = DiffusionState {
        x,
        t_index: indices[0],
    };
    for (step, pair) in indices.windows(2).enumerate() {
        let quad = backend
            .evaluate(&state, conditions)
            .map_err(|e| e.at_step(step))?;
        let eps_hat = combine(&quad, weights).map_err(|e| e.at_step(step))?;
        state = ddim_step(&state, &eps_hat, schedule, pair[1]).map_err(|e| e.at_step(step))?;
    }
    Ok(state.x)
}

/// Effective Gaussian implied by the weighted combination of branch scores
/// at signal level `at_alpha_bar`.
///
/// Every branch score is affine in `x`, so the combination is the score of a
/// single Gaussian: collect the per-branch precisions weighted by the
/// guidance coefficients, then invert. Combined precision <= 0 means the
/// weight configuration has no stationary Gaussian.
pub fn tilted_moments(
    uncond: &GaussianCondition,
    conditions: &ConditionSet<GaussianCondition>,
    weights: &GuidanceWeights,
    at_alpha_bar: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(at_alpha_bar > 0.0 && at_alpha_bar <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha_bar must lie in (0, 1], got {at_alpha_bar}"
        )));
    }
    weights.validate()?;
    let branches = branch_coefficients(uncond, conditions, weights)?;

    let dim = uncond.dim();
    let mut precision = 0.0;
    let mut weighted_mean = vec![0.0; dim];
    for (cond, coeff) in &branches {
        if cond.dim() != dim {
            return Err(Error::invalid(
                "tilted_moments: branch condition dimensions disagree",
            ));
        }
        let (mean, variance) = cond.noised_moments(at_alpha_bar);
        if variance <= 0.0 {
            return Err(Error::invalid(
                "tilted_moments: degenerate branch marginal (zero variance)",
            ));
        }
        precision += coeff / variance;
        for (acc, m) in weighted_mean.iter_mut().zip(&mean) {
            *acc += coeff * m / variance;
        }
    }
    if precision <= 0.0 {
        return Err(Error::NonNormalizableTilt(precision));
    }
    let variance = 1.0 / precision;
    let mean = weighted_mean.iter().map(|v| v * variance).collect();
    Ok((mean, variance))
}

/// Branch conditions with their guidance coefficients, matching the branch
/// presence pattern. The coefficients always sum to 1.
fn branch_coefficients<'a>(
    uncond: &'a GaussianCondition,
    conditions: &'a ConditionSet<GaussianCondition>,
    weights: &GuidanceWeights,
) -> Result<Vec<(&'a GaussianCondition, f64)>> {
    let w = weights;
    match (conditions.image_pos(), conditions.image_neg()) {
        (Some(pos), Some(neg)) => Ok(vec![
            (uncond, 1.0 - w.w_text),
            (conditions.text(), w.w_text - w.w_im_pos),
            (pos, w.w_im_pos + w.w_im_neg),
            (neg, -w.w_im_neg),
        ]),
        (Some(pos), None) => {
            if w.w_im_neg != 0.0 {
                return Err(Error::invalid(
                    "w_im_neg is nonzero but the negative image branch is absent",
                ));
            }
            Ok(vec![
                (uncond, 1.0 - w.w_text),
                (conditions.text(), w.w_text - w.w_im_pos),
                (pos, w.w_im_pos),
            ])
        }
        (None, _) => {
            if w.w_im_pos != 0.0 || w.w_im_neg != 0.0 {
                return Err(Error::invalid(
                    "image guidance weights are nonzero but no image branch is present",
                ));
            }
            Ok(vec![(uncond, 1.0 - w.w_text), (conditions.text(), w.w_text)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::AnalyticBackend;

    #[test]
    fn ddim_update_scalar_example() {
        // x = 1, ab_t = 0.25, ab_next = 0.75, eps = 1:
        // x0 = (1 - sqrt(0.75)) / 0.5, x' = sqrt(0.75) x0 + 0.5 = sqrt(3) - 1
        let out = ddim_update(&[1.0], &[1.0], 0.25, 0.75).unwrap();
        assert!((out[0] - 0.7320508075688774).abs() < 1e-15);
    }

    #[test]
    fn ddim_update_final_projection() {
        // ab_next = 1 returns x0_pred exactly
        let x = [1.3];
        let eps = [0.4];
        let ab_t: f64 = 0.6;
        let x0 = (x[0] - (1.0 - ab_t).sqrt() * eps[0]) / ab_t.sqrt();
        let out = ddim_update(&x, &eps, ab_t, 1.0).unwrap();
        assert_eq!(out[0], x0);
    }

    #[test]
    fn ddim_update_fixed_point() {
        // eps = 0 and equal signal levels leave the state unchanged
        let out = ddim_update(&[0.7, -0.2], &[0.0, 0.0], 0.5, 0.5).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15);
        assert!((out[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn ddim_update_rejects_singularity() {
        assert!(ddim_update(&[1.0], &[0.0], 0.0, 0.5).is_err());
    }

    #[test]
    fn ddim_step_requires_decreasing_index() {
        let schedule = NoiseSchedule::linear(100, 1e-4, 10).unwrap();
        let state = DiffusionState::new(vec![1.0], 10).unwrap();
        assert!(ddim_step(&state, &[0.0], &schedule, 10).is_err());
        assert!(ddim_step(&state, &[0.0], &schedule, 20).is_err());
        assert!(ddim_step(&state, &[0.0], &schedule, 5).is_ok());
    }

    #[test]
    fn point_mass_target_reached_over_ten_step_schedule() {
        // exact analytic eps with point-mass data reaches mu to <= 1e-6
        let schedule = NoiseSchedule::linear(1000, 1e-4, 10).unwrap();
        let mu = vec![1.7, -0.4, 0.9];
        let cond = GaussianCondition::point(mu.clone()).unwrap();
        let backend = AnalyticBackend::new(cond.clone(), schedule.clone());
        let conditions = ConditionSet::text_only(cond.clone());
        let weights = GuidanceWeights::text_only(1.0).unwrap();
        let out = sample(&backend, &conditions, &weights, &schedule, 99).unwrap();
        for (o, m) in out.iter().zip(&mu) {
            assert!((o - m).abs() <= 1e-6, "missed target: {o} vs {m}");
        }
        // dual conditioning with every branch at mu telescopes to the same
        let dual = ConditionSet::dual(cond.clone(), cond.clone(), cond);
        let weights = GuidanceWeights::new(3.0, 1.5, 0.75).unwrap();
        let out = sample(&backend, &dual, &weights, &schedule, 99).unwrap();
        for (o, m) in out.iter().zip(&mu) {
            assert!((o - m).abs() <= 1e-6, "missed target: {o} vs {m}");
        }
    }

    #[test]
    fn pure_conditional_sampling_matches_data_moments() {
        // weights (1, 0, 0): 10,000 samples' mean and variance match the
        // conditional data distribution's within 4 Monte-Carlo standard errors
        let schedule = NoiseSchedule::linear(1000, 1e-6, 200).unwrap();
        let uncond = GaussianCondition::new(vec![0.3], 1.0).unwrap();
        let data = GaussianCondition::new(vec![1.4], 0.49).unwrap();
        let backend = AnalyticBackend::new(uncond, schedule.clone());
        let conditions = ConditionSet::text_only(data.clone());
        let weights = GuidanceWeights::text_only(1.0).unwrap();

        let n = 10_000usize;
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let out = sample(&backend, &conditions, &weights, &schedule, 50_000 + i as u64).unwrap();
            values.push(out[0]);
        }
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se_mean = (0.49f64 / n as f64).sqrt();
        let se_var = 0.49 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean - 1.4).abs() <= 4.0 * se_mean,
            "mean {mean} vs 1.4 (4se {})",
            4.0 * se_mean
        );
        assert!(
            (var - 0.49).abs() <= 4.0 * se_var,
            "variance {var} vs 0.49 (4se {})",
            4.0 * se_var
        );
    }

    #[test]
    fn sample_is_bit_reproducible() {
        let schedule = NoiseSchedule::linear(1000, 1e-4, 50).unwrap();
        let uncond = GaussianCondition::new(vec![0.0, 0.0], 1.0).unwrap();
        let backend = AnalyticBackend::new(uncond, schedule.clone());
        let conditions = ConditionSet::dual(
            GaussianCondition::new(vec![1.0, 0.5], 1.0).unwrap(),
            GaussianCondition::new(vec![2.0, -0.5], 1.0).unwrap(),
            GaussianCondition::new(vec![0.5, 2.0], 1.0).unwrap(),
        );
        let weights = GuidanceWeights::new(2.0, 1.5, 0.5).unwrap();
        let a = sample(&backend, &conditions, &weights, &schedule, 1234).unwrap();
        let b = sample(&backend, &conditions, &weights, &schedule, 1234).unwrap();
        assert_eq!(a, b);
        let c = sample(&backend, &conditions, &weights, &schedule, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_errors_carry_step_index() {
        // weights demand a positive branch the conditions lack
        let schedule = NoiseSchedule::linear(100, 1e-4, 5).unwrap();
        let uncond = GaussianCondition::new(vec![0.0], 1.0).unwrap();
        let backend = AnalyticBackend::new(uncond.clone(), schedule.clone());
        let conditions = ConditionSet::text_only(uncond);
        let weights = GuidanceWeights::new(1.0, 0.5, 0.0).unwrap();
        match sample(&backend, &conditions, &weights, &schedule, 1) {
            Err(Error::AtStep { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected step-annotated error, got {other:?}"),
        }
    }

    #[test]
    fn tilted_reduction_to_text_branch() {
        // weights (1, 0, 0): exactly the text branch's noised moments
        let uncond = GaussianCondition::new(vec![0.0], 1.0).unwrap();
        let text = GaussianCondition::new(vec![2.0], 0.5).unwrap();
        let conds = ConditionSet::dual(text.clone(), text.clone(), text.clone());
        let w = GuidanceWeights::new(1.0, 0.0, 0.0).unwrap();
        let ab = 0.37;
        let (mean, var) = tilted_moments(&uncond, &conds, &w, ab).unwrap();
        let (m_ref, v_ref) = text.noised_moments(ab);
        assert!((mean[0] - m_ref[0]).abs() < 1e-12);
        assert!((var - v_ref).abs() < 1e-12);
    }

    #[test]
    fn tilted_telescopes_for_identical_branches() {
        let c = GaussianCondition::new(vec![1.5, -2.0], 0.8).unwrap();
        let conds = ConditionSet::dual(c.clone(), c.clone(), c.clone());
        let w = GuidanceWeights::new(5.0, 3.0, 2.5).unwrap();
        let ab = 0.61;
        let (mean, var) = tilted_moments(&c, &conds, &w, ab).unwrap();
        let (m_ref, v_ref) = c.noised_moments(ab);
        for (a, b) in mean.iter().zip(&m_ref) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((var - v_ref).abs() < 1e-12);
    }

    #[test]
    fn tilted_scalar_example() {
        // uncond N(0,1), text N(1,1), pos N(2,1), neg N(3,1), weights (2,1.5,0.5), ab=1
        // -> mean 0 + 2*1 + 1.5*1 - 0.5*1 = 3.0, variance 1
        let uncond = GaussianCondition::new(vec![0.0], 1.0).unwrap();
        let conds = ConditionSet::dual(
            GaussianCondition::new(vec![1.0], 1.0).unwrap(),
            GaussianCondition::new(vec![2.0], 1.0).unwrap(),
            GaussianCondition::new(vec![3.0], 1.0).unwrap(),
        );
        let w = GuidanceWeights::new(2.0, 1.5, 0.5).unwrap();
        let (mean, var) = tilted_moments(&uncond, &conds, &w, 1.0).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_detects_non_normalizable_configuration() {
        // a huge negative weight on a tight branch drives combined precision <= 0
        let uncond = GaussianCondition::new(vec![0.0], 1.0).unwrap();
        let conds = ConditionSet::dual(
            GaussianCondition::new(vec![1.0], 1.0).unwrap(),
            GaussianCondition::new(vec![2.0], 1.0).unwrap(),
            GaussianCondition::new(vec![3.0], 0.01).unwrap(),
        );
        let w = GuidanceWeights::new(1.0, 0.2, 5.0).unwrap();
        match tilted_moments(&uncond, &conds, &w, 1.0) {
            Err(Error::NonNormalizableTilt(p)) => assert!(p <= 0.0),
            other => panic!("expected non-normalizable tilt, got {other:?}"),
        }
    }
}
