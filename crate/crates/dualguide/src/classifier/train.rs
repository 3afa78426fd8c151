//! Training loop: compose batches, take weighted-loss gradients, update the
//! adapter parameters with AdamW.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::batch::{compose_batch, LabeledExample};
use crate::classifier::loss::LossReduction;
use crate::classifier::model::{evaluate, TrainableClassifier};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Relative weight of the real half of the loss.
    #[serde(default = "default_lambda")]
    pub lambda_weight: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// No published value exists to default to; must be set explicitly.
    /// `sweep_learning_rates` helps pick one.
    pub learning_rate: f64,
    /// Must be set explicitly; no fidelity is claimed for any default.
    pub epochs: usize,
    /// Rank of the low-rank adapter blocks a production model trains.
    #[serde(default = "default_adapter_rank")]
    pub adapter_rank: usize,
    #[serde(default)]
    pub loss_reduction: LossReduction,
    #[serde(default)]
    pub weight_decay: f64,
    /// Fraction of the synthetic pool held out for validation when no
    /// validation set is provided.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_lambda() -> f64 {
    0.8
}
fn default_batch_size() -> usize {
    32
}
fn default_adapter_rank() -> usize {
    16
}
fn default_val_fraction() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_weight) {
            return Err(Error::Config(format!(
                "lambda_weight must lie in [0, 1], got {}",
                self.lambda_weight
            )));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch_size must be a positive even integer, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.adapter_rank == 0 {
            return Err(Error::Config("adapter_rank must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_accuracy: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// "provided" or "held-out-synthetic".
    pub validation_source: String,
    pub final_val_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Decoupled-weight-decay Adam over a flat parameter vector.
pub struct AdamW {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, dim: usize) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * *p);
        }
    }
}

/// Batches per epoch: enough half-batches to cover the synthetic pool once.
pub(crate) fn epoch_batch_count(synth_len: usize, batch_size: usize) -> usize {
    let half = batch_size / 2;
    synth_len.div_ceil(half).max(1)
}

/// Train a model on mixed real/synthetic pools. When no validation set is
/// given, one is carved from the synthetic pool (and flagged in the report).
/// Deterministic given the seed.
pub fn train<M: TrainableClassifier>(
    model: &mut M,
    real_pool: &[LabeledExample],
    synth_pool: &[LabeledExample],
    validation: Option<&[LabeledExample]>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    config.validate()?;
    if real_pool.is_empty() || synth_pool.is_empty() {
        return Err(Error::invalid("training pools must be non-empty"));
    }
    check_labels(model.num_classes(), real_pool, "real")?;
    check_labels(model.num_classes(), synth_pool, "synthetic")?;

    // validation split
    let mut carved: Vec<LabeledExample> = Vec::new();
    let mut train_synth: Vec<LabeledExample> = Vec::new();
    let (val_set, validation_source): (&[LabeledExample], &str) = match validation {
        Some(v) => {
            if v.is_empty() {
                return Err(Error::invalid("provided validation set is empty"));
            }
            train_synth = synth_pool.to_vec();
            (v, "provided")
        }
        None => {
            let mut indices: Vec<usize> = (0..synth_pool.len()).collect();
            let mut split_rng = rng::stream(seed, tag::VALIDATION_SPLIT, 0);
            shuffle(&mut indices, &mut split_rng);
            let n_val = ((synth_pool.len() as f64 * config.val_fraction).round() as usize)
                .clamp(1, synth_pool.len() - 1);
            for (k, &i) in indices.iter().enumerate() {
                if k < n_val {
                    carved.push(synth_pool[i].clone());
                } else {
                    train_synth.push(synth_pool[i].clone());
                }
            }
            (&carved, "held-out-synthetic")
        }
    };

    let mut report = TrainReport {
        epochs: Vec::new(),
        validation_source: validation_source.to_string(),
        final_val_accuracy: evaluate(model, val_set)?,
        checkpoint: None,
    };
    if config.epochs == 0 {
        return Ok(report);
    }

    let mut optimizer = AdamW::new(
        config.learning_rate,
        config.weight_decay,
        model.trainable_params().len(),
    );
    let batches = epoch_batch_count(train_synth.len(), config.batch_size);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut epoch_rng = rng::stream(seed, tag::EPOCH, epoch as u64);
        let mut loss_total = 0.0;
        for _ in 0..batches {
            let batch = compose_batch(real_pool, &train_synth, config.batch_size, &mut epoch_rng)?;
            let (loss, grads) =
                model.loss_and_grad(&batch, config.lambda_weight, config.loss_reduction)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let mut params = model.trainable_params();
            optimizer.update(&mut params, &grads);
            model.set_trainable_params(&params)?;
            loss_total += loss;
        }
        let val_accuracy = evaluate(model, val_set)?;
        report.epochs.push(EpochRecord {
            epoch,
            loss: loss_total / batches as f64,
            val_accuracy,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        report.final_val_accuracy = val_accuracy;
    }
    Ok(report)
}

/// Train once per candidate learning rate (on clones of the initial model)
/// and return per-rate reports; callers keep the best by final validation
/// accuracy.
pub fn sweep_learning_rates<M: TrainableClassifier + Clone>(
    model: &M,
    real_pool: &[LabeledExample],
    synth_pool: &[LabeledExample],
    validation: Option<&[LabeledExample]>,
    config: &TrainConfig,
    rates: &[f64],
    seed: u64,
) -> Result<Vec<(f64, M, TrainReport)>> {
    if rates.is_empty() {
        return Err(Error::Config("learning-rate sweep list is empty".into()));
    }
    let mut results = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut candidate = model.clone();
        let mut cfg = config.clone();
        cfg.learning_rate = rate;
        let report = train(&mut candidate, real_pool, synth_pool, validation, &cfg, seed)?;
        results.push((rate, candidate, report));
    }
    Ok(results)
}

fn check_labels(n_classes: usize, pool: &[LabeledExample], name: &str) -> Result<()> {
    for (i, ex) in pool.iter().enumerate() {
        if ex.label >= n_classes {
            return Err(Error::invalid(format!(
                "{name} example {i} has label {} >= {n_classes}",
                ex.label
            )));
        }
    }
    Ok(())
}

fn shuffle(indices: &mut [usize], rng: &mut impl rand::Rng) {
    for k in (1..indices.len()).rev() {
        let j = rng.random_range(0..=k);
        indices.swap(k, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::model::LinearHead;
    use rand::Rng;

    fn separable_pools(per_class: usize, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
        let mut rng = rng::stream(seed, 0, 0);
        let make = |rng: &mut rand_chacha::ChaCha8Rng, label: usize| {
            let center = if label == 0 { -2.0 } else { 2.0 };
            LabeledExample {
                features: vec![
                    center + rng.random_range(-0.5..0.5),
                    center + rng.random_range(-0.5..0.5),
                ],
                label,
            }
        };
        let real: Vec<LabeledExample> = (0..per_class)
            .flat_map(|_| [0, 1])
            .map(|l| make(&mut rng, l))
            .collect();
        let synth: Vec<LabeledExample> = (0..per_class * 4)
            .flat_map(|_| [0, 1])
            .map(|l| make(&mut rng, l))
            .collect();
        (real, synth)
    }

    fn config(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            lambda_weight: 0.8,
            batch_size: 8,
            learning_rate: lr,
            epochs,
            adapter_rank: 16,
            loss_reduction: LossReduction::Sum,
            weight_decay: 0.0,
            val_fraction: 0.1,
        }
    }

    #[test]
    fn separable_task_reaches_full_training_accuracy_within_50_epochs() {
        let (real, synth) = separable_pools(8, 11);
        let mut model = LinearHead::new(2, 2).unwrap();
        let report = train(&mut model, &real, &synth, None, &config(0.05, 50), 5).unwrap();
        let train_acc = evaluate(&model, &real).unwrap();
        assert_eq!(train_acc, 1.0, "report: {report:?}");
        assert!(report.final_val_accuracy >= 0.9);
    }

    #[test]
    fn zero_epochs_is_a_noop_with_empty_history() {
        let (real, synth) = separable_pools(4, 3);
        let mut model = LinearHead::new(2, 2).unwrap();
        let before = model.trainable_params();
        let report = train(&mut model, &real, &synth, None, &config(0.1, 0), 1).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(model.trainable_params(), before);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let (real, synth) = separable_pools(6, 21);
        let mut m1 = LinearHead::new(2, 2).unwrap();
        let mut m2 = LinearHead::new(2, 2).unwrap();
        let r1 = train(&mut m1, &real, &synth, None, &config(0.05, 10), 77).unwrap();
        let r2 = train(&mut m2, &real, &synth, None, &config(0.05, 10), 77).unwrap();
        assert_eq!(m1, m2);
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.val_accuracy, b.val_accuracy);
        }
    }

    #[test]
    fn lambda_one_ignores_synthetic_content() {
        // with lambda = 1 the synthetic half carries zero loss weight; a run
        // against a pure-noise synthetic pool must match a run whose
        // "synthetic" pool is real data, validation held fixed
        let (real, synth) = separable_pools(6, 31);
        let mut noise_rng = rng::stream(99, 0, 0);
        let noise: Vec<LabeledExample> = (0..synth.len())
            .map(|_| LabeledExample {
                features: vec![
                    noise_rng.random_range(-5.0..5.0),
                    noise_rng.random_range(-5.0..5.0),
                ],
                label: noise_rng.random_range(0..2),
            })
            .collect();
        let real_as_synth: Vec<LabeledExample> = real
            .iter()
            .cycle()
            .take(synth.len())
            .cloned()
            .collect();
        let val: Vec<LabeledExample> = separable_pools(10, 41).1;

        let mut cfg = config(0.05, 15);
        cfg.lambda_weight = 1.0;
        let mut m_noise = LinearHead::new(2, 2).unwrap();
        let r_noise = train(&mut m_noise, &real, &noise, Some(&val), &cfg, 13).unwrap();
        let mut m_real = LinearHead::new(2, 2).unwrap();
        let r_real = train(&mut m_real, &real, &real_as_synth, Some(&val), &cfg, 13).unwrap();

        assert_eq!(m_noise, m_real);
        assert!(
            (r_noise.final_val_accuracy - r_real.final_val_accuracy).abs() <= 0.005,
            "accuracies diverged: {} vs {}",
            r_noise.final_val_accuracy,
            r_real.final_val_accuracy
        );
    }

    #[test]
    fn bad_labels_rejected() {
        let (real, synth) = separable_pools(2, 1);
        let mut bad = synth.clone();
        bad[0].label = 7;
        let mut model = LinearHead::new(2, 2).unwrap();
        assert!(train(&mut model, &real, &bad, None, &config(0.1, 1), 0).is_err());
    }

    #[test]
    fn validation_sources_are_flagged() {
        let (real, synth) = separable_pools(4, 2);
        let mut model = LinearHead::new(2, 2).unwrap();
        let r = train(&mut model, &real, &synth, None, &config(0.05, 1), 0).unwrap();
        assert_eq!(r.validation_source, "held-out-synthetic");
        let mut model = LinearHead::new(2, 2).unwrap();
        let r = train(&mut model, &real, &synth, Some(&real), &config(0.05, 1), 0).unwrap();
        assert_eq!(r.validation_source, "provided");
    }

    #[test]
    fn sweep_returns_one_result_per_rate() {
        let (real, synth) = separable_pools(4, 8);
        let model = LinearHead::new(2, 2).unwrap();
        let results = sweep_learning_rates(
            &model,
            &real,
            &synth,
            None,
            &config(0.1, 5),
            &[0.001, 0.01, 0.1],
            3,
        )
        .unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].0, 0.001);
        // sweep must actually use each rate: reports differ
        assert_ne!(results[0].2.epochs, results[2].2.epochs);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 0,
                loss: 1.25,
                val_accuracy: 0.75,
                wall_ms: 12,
            }],
            validation_source: "provided".into(),
            final_val_accuracy: 0.75,
            checkpoint: Some("model.json".into()),
        };
        report.write(&path).unwrap();
        assert_eq!(TrainReport::read(&path).unwrap(), report);
    }

    #[test]
    fn epoch_batch_count_covers_pool() {
        assert_eq!(epoch_batch_count(40, 32), 3);
        assert_eq!(epoch_batch_count(32, 32), 2);
        assert_eq!(epoch_batch_count(16, 32), 1);
        assert_eq!(epoch_batch_count(1, 2), 1);
    }
}
