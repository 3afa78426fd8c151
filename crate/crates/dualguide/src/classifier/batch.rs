//! Batch composition: equal real and synthetic halves, replicating real
//! examples when the pool is smaller than a half-batch.

use rand::Rng;

use crate::error::{Error, Result};

/// A feature vector with its class label. For real examples the label is the
/// ground truth; for synthetic examples it is the target class of the
/// positive prompt recorded in the generation manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Half real, half synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub real: Vec<LabeledExample>,
    pub synth: Vec<LabeledExample>,
}

/// Draw `batch_size / 2` real then `batch_size / 2` synthetic examples.
/// Each half samples without replacement while its pool allows, otherwise
/// with replacement. The real half is drawn from the stream first, so the
/// real selection is independent of the synthetic pool's contents.
pub fn compose_batch(
    real_pool: &[LabeledExample],
    synth_pool: &[LabeledExample],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<TrainingBatch> {
    if real_pool.is_empty() {
        return Err(Error::invalid("real pool is empty"));
    }
    if synth_pool.is_empty() {
        return Err(Error::invalid("synthetic pool is empty"));
    }
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "batch_size must be a positive even integer, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    let real = draw_half(real_pool, half, rng);
    let synth = draw_half(synth_pool, half, rng);
    Ok(TrainingBatch { real, synth })
}

fn draw_half(pool: &[LabeledExample], count: usize, rng: &mut impl Rng) -> Vec<LabeledExample> {
    if pool.len() >= count {
        // partial Fisher-Yates over indices: distinct draws
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for k in 0..count {
            let j = rng.random_range(k..indices.len());
            indices.swap(k, j);
        }
        indices[..count].iter().map(|&i| pool[i].clone()).collect()
    } else {
        // replication: uniform draws with replacement
        (0..count)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(n: usize, label: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                features: vec![i as f64, label as f64],
                label,
            })
            .collect()
    }

    #[test]
    fn full_pools_give_distinct_halves() {
        let real = pool(16, 0);
        let synth = pool(200, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = compose_batch(&real, &synth, 32, &mut rng).unwrap();
        assert_eq!(batch.real.len(), 16);
        assert_eq!(batch.synth.len(), 16);
        // each real example appears at most once
        let mut seen: Vec<&Vec<f64>> = batch.real.iter().map(|e| &e.features).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn small_real_pool_replicates() {
        let real = pool(4, 0);
        let synth = pool(100, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = compose_batch(&real, &synth, 32, &mut rng).unwrap();
        assert_eq!(batch.real.len(), 16);
        // all 16 slots are filled from the 4-element pool
        for e in &batch.real {
            assert!(real.contains(e));
        }
    }

    #[test]
    fn minimal_even_batch() {
        let real = pool(3, 0);
        let synth = pool(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = compose_batch(&real, &synth, 2, &mut rng).unwrap();
        assert_eq!(batch.real.len(), 1);
        assert_eq!(batch.synth.len(), 1);
    }

    #[test]
    fn empty_pools_and_odd_batches_rejected() {
        let ok = pool(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(compose_batch(&[], &ok, 2, &mut rng).is_err());
        assert!(compose_batch(&ok, &[], 2, &mut rng).is_err());
        assert!(compose_batch(&ok, &ok, 3, &mut rng).is_err());
        assert!(compose_batch(&ok, &ok, 0, &mut rng).is_err());
    }

    #[test]
    fn real_draws_are_independent_of_synth_pool_contents() {
        // the real half must be identical across runs that differ only in
        // the synthetic pool's contents (sizes equal)
        let real = pool(8, 0);
        let synth_a = pool(20, 1);
        let synth_b: Vec<LabeledExample> = pool(20, 1)
            .into_iter()
            .map(|mut e| {
                e.features[0] += 100.0;
                e
            })
            .collect();
        let batch_a = compose_batch(&real, &synth_a, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let batch_b = compose_batch(&real, &synth_b, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(batch_a.real, batch_b.real);
    }
}
