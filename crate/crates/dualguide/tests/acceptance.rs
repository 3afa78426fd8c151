//! Acceptance suite: one test per verification criterion, each printing a
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Heavy checks grab a global lock so the stated runtime budgets are
//! measured without cross-test contention.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Duration;

use dualguide::verify::{self, CheckOutcome, GuidanceVariant};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(outcome: &CheckOutcome, budget: Option<Duration>) {
    println!(
        "criterion {:>2} [{}]: {} ({} ms) {}",
        outcome.criterion,
        outcome.name,
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.millis,
        outcome.detail
    );
    assert!(
        outcome.passed,
        "criterion {} failed: {}",
        outcome.criterion, outcome.detail
    );
    if let Some(limit) = budget {
        assert!(
            outcome.millis <= limit.as_millis(),
            "criterion {} exceeded its {} ms budget: {} ms",
            outcome.criterion,
            limit.as_millis(),
            outcome.millis
        );
    }
}

#[test]
fn criterion_01_guidance_reduction_identities() {
    let _guard = serial();
    let outcome = verify::check_reduction_identities(GuidanceVariant::Reference);
    report(&outcome, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_02_forward_pass_accounting() {
    let _guard = serial();
    let outcome = verify::check_forward_pass_accounting();
    report(&outcome, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_03_guided_sampling_matches_tilted_moments() {
    let _guard = serial();
    let outcome = verify::check_guided_sampling_moments(GuidanceVariant::Reference);
    report(&outcome, Some(Duration::from_secs(60)));
}

#[test]
fn criterion_04_analytic_score_matches_finite_differences() {
    let _guard = serial();
    let outcome = verify::check_score_finite_difference();
    report(&outcome, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_05_negative_sampling_chi_square() {
    let _guard = serial();
    let outcome = verify::check_negative_sampling_chi_square();
    report(&outcome, Some(Duration::from_secs(30)));
}

#[test]
fn criterion_06_similarity_fixtures_exact() {
    let _guard = serial();
    let outcome = verify::check_similarity_fixtures();
    report(&outcome, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_07_weighted_loss_and_gradient() {
    let _guard = serial();
    let outcome = verify::check_loss_and_gradient();
    report(&outcome, Some(Duration::from_secs(10)));
}

#[test]
fn criterion_08_batch_composition_counted_exhaustively() {
    let _guard = serial();
    let outcome = verify::check_batch_composition();
    report(&outcome, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_09_end_to_end_toy_pipeline() {
    let _guard = serial();
    let outcome = verify::check_end_to_end_pipeline();
    report(&outcome, Some(Duration::from_secs(180)));
}

#[test]
fn criterion_10_mutation_sensitivity() {
    let _guard = serial();
    let outcome = verify::check_mutation_sensitivity();
    report(&outcome, Some(Duration::from_secs(120)));
}

#[test]
fn full_suite_passes_within_five_minutes() {
    let _guard = serial();
    let started = std::time::Instant::now();
    let outcomes = verify::run_all();
    let elapsed = started.elapsed();
    for outcome in &outcomes {
        println!(
            "suite: criterion {:>2} {} -> {}",
            outcome.criterion,
            outcome.name,
            if outcome.passed { "PASS" } else { "FAIL" }
        );
    }
    assert!(outcomes.iter().all(|o| o.passed));
    assert_eq!(outcomes.len(), 10);
    assert!(
        elapsed <= Duration::from_secs(300),
        "full suite took {elapsed:?}, budget is 5 minutes"
    );
}

#[test]
fn mutation_demo_pair_fails_only_the_moment_oracle() {
    let _guard = serial();
    let outcomes = verify::run_mutation_demo();
    assert_eq!(outcomes.len(), 2);
    assert!(
        outcomes[0].passed,
        "reduced identities must pass under the mutation: {}",
        outcomes[0].detail
    );
    assert!(
        !outcomes[1].passed,
        "the moment oracle must catch the mutation: {}",
        outcomes[1].detail
    );
}
