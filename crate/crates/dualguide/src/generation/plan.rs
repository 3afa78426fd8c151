//! Generation planning: fix every random choice (positive exemplar, negative
//! class and exemplar, seed) up front so execution is deterministic and any
//! single item reproducible in isolation.

use std::path::PathBuf;

use rand::{Rng, RngCore};

use crate::dataset::FewShotDataset;
use crate::error::{Error, Result};
use crate::generation::prompt::make_prompt;
use crate::guidance::GuidanceWeights;
use crate::rng::{self, tag};
use crate::similarity::{negative_distribution, sample_negative_class, ClassSimilarityMatrix};

/// One planned synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlanItem {
    /// Global position in the plan.
    pub item_index: usize,
    /// Position within the target class (names the output file).
    pub within_class_index: usize,
    pub target_class: usize,
    pub target_class_name: String,
    /// Positive exemplar, relative to the dataset root; always from the
    /// target class.
    pub positive_image: PathBuf,
    pub negative_class: usize,
    pub negative_class_name: String,
    /// Negative exemplar, relative to the dataset root; always from the
    /// negative class.
    pub negative_image: PathBuf,
    pub prompt: String,
    pub weights: GuidanceWeights,
    /// Seed for the reverse process and augmentation streams of this item.
    pub seed: u64,
}

/// Build the full plan: `n_classes * n_synth_per_class` items. Per item, the
/// positive exemplar is uniform over the target class's shots, the negative
/// class is drawn from the similarity softmax, and the negative exemplar is
/// uniform over that class's shots. Item seeds derive from
/// `(master_seed, class, index)`.
#[allow(clippy::needless_range_loop)]
pub fn build_plan(
    dataset: &FewShotDataset,
    matrix: &ClassSimilarityMatrix,
    n_synth_per_class: usize,
    weights: &GuidanceWeights,
    template: &str,
    master_seed: u64,
) -> Result<Vec<GenerationPlanItem>> {
    if n_synth_per_class == 0 {
        return Err(Error::invalid("n_synth_per_class must be >= 1"));
    }
    weights.validate()?;
    check_class_match(dataset, matrix)?;

    let distributions: Vec<_> = (0..dataset.n_classes())
        .map(|anchor| negative_distribution(matrix, anchor))
        .collect::<Result<_>>()?;

    let mut plan = Vec::with_capacity(dataset.n_classes() * n_synth_per_class);
    for class in 0..dataset.n_classes() {
        let class_name = dataset.classes()[class].clone();
        let prompt = make_prompt(&class_name, template)?;
        for index in 0..n_synth_per_class {
            let item_seed = rng::derive_seed(master_seed, class as u64, index as u64);
            let mut item_rng = rng::stream(item_seed, tag::PLAN_ITEM, 0);

            let positive_shot = item_rng.random_range(0..dataset.n_shots());
            let negative_class = sample_negative_class(&distributions[class], &mut item_rng);
            let negative_shot = item_rng.random_range(0..dataset.n_shots());
            let sample_seed = item_rng.next_u64();

            plan.push(GenerationPlanItem {
                item_index: plan.len(),
                within_class_index: index,
                target_class: class,
                target_class_name: class_name.clone(),
                positive_image: dataset.shots(class)[positive_shot].clone(),
                negative_class,
                negative_class_name: dataset.classes()[negative_class].clone(),
                negative_image: dataset.shots(negative_class)[negative_shot].clone(),
                prompt: prompt.clone(),
                weights: *weights,
                seed: sample_seed,
            });
        }
    }
    Ok(plan)
}

fn check_class_match(dataset: &FewShotDataset, matrix: &ClassSimilarityMatrix) -> Result<()> {
    if dataset.classes() != matrix.class_names {
        let extra: Vec<&String> = matrix
            .class_names
            .iter()
            .filter(|c| !dataset.classes().contains(c))
            .collect();
        let missing: Vec<&String> = dataset
            .classes()
            .iter()
            .filter(|c| !matrix.class_names.contains(c))
            .collect();
        return Err(Error::Config(format!(
            "similarity matrix classes do not match dataset classes \
             (matrix-only: {extra:?}, dataset-only: {missing:?})"
        )));
    }
    Ok(())
}
