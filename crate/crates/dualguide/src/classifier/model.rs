//! Classifier model contracts and the linear-head reference model.
//!
//! Production deployments put low-rank adapter blocks on both towers of a
//! frozen dual-encoder and train only those; the contracts here expose
//! exactly that surface (forward to logits, flat trainable parameters,
//! loss gradient). The linear head is the desk-scale model: a softmax
//! regression over precomputed feature vectors with analytic gradients.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::batch::TrainingBatch;
use crate::classifier::loss::{cross_entropy, LossReduction};
use crate::error::{Error, Result};

pub trait ClassifierModel {
    /// Per-class logits for one input.
    fn forward(&self, input: &[f64]) -> Vec<f64>;

    fn num_classes(&self) -> usize;
}

/// A model whose trainable (adapter) parameters are exposed as a flat
/// vector, with the weighted-loss gradient taken with respect to them.
pub trait TrainableClassifier: ClassifierModel {
    fn trainable_params(&self) -> Vec<f64>;

    fn set_trainable_params(&mut self, params: &[f64]) -> Result<()>;

    /// Weighted loss over a batch and its gradient w.r.t. the trainable
    /// parameters.
    fn loss_and_grad(
        &self,
        batch: &TrainingBatch,
        lambda_weight: f64,
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)>;
}

/// Linear softmax head: logits = W x + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearHead {
    input_dim: usize,
    n_classes: usize,
    /// Row-major (n_classes x input_dim).
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearHead {
    /// Zero-initialized head (uniform logits before training).
    pub fn new(input_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 {
            return Err(Error::invalid(format!(
                "linear head needs input_dim >= 1 and n_classes >= 2, got ({input_dim}, {n_classes})"
            )));
        }
        Ok(LinearHead {
            input_dim,
            n_classes,
            weights: vec![0.0; n_classes * input_dim],
            bias: vec![0.0; n_classes],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("model serialization cannot fail");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LinearHead =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if model.weights.len() != model.n_classes * model.input_dim
            || model.bias.len() != model.n_classes
        {
            return Err(Error::parse(path, "checkpoint shape mismatch"));
        }
        Ok(model)
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Accumulate the CE gradient of one example, scaled by `scale`.
    fn accumulate_example(
        &self,
        example_features: &[f64],
        target: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if example_features.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "example has dimension {}, model expects {}",
                example_features.len(),
                self.input_dim
            )));
        }
        let logits = self.forward(example_features);
        let loss = cross_entropy(&logits, target)?;
        let probs = Self::softmax(&logits);
        let (grad_w, grad_b) = grad.split_at_mut(self.n_classes * self.input_dim);
        for c in 0..self.n_classes {
            let delta = scale * (probs[c] - (c == target) as usize as f64);
            for (d, &x) in example_features.iter().enumerate() {
                grad_w[c * self.input_dim + d] += delta * x;
            }
            grad_b[c] += delta;
        }
        Ok(loss)
    }
}

impl ClassifierModel for LinearHead {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.input_dim..(c + 1) * self.input_dim];
                row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.bias[c]
            })
            .collect()
    }

    fn num_classes(&self) -> usize {
        self.n_classes
    }
}

impl TrainableClassifier for LinearHead {
    fn trainable_params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn set_trainable_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.weights.len() + self.bias.len();
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    fn loss_and_grad(
        &self,
        batch: &TrainingBatch,
        lambda_weight: f64,
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)> {
        if !(0.0..=1.0).contains(&lambda_weight) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, 1], got {lambda_weight}"
            )));
        }
        let mut grad = vec![0.0; self.weights.len() + self.bias.len()];
        let mut loss = 0.0;
        for (examples, weight) in [(&batch.real, lambda_weight), (&batch.synth, 1.0 - lambda_weight)]
        {
            let norm = match reduction {
                LossReduction::Sum => 1.0,
                LossReduction::Mean => 1.0 / examples.len().max(1) as f64,
            };
            let mut half = 0.0;
            for ex in examples {
                half += self.accumulate_example(&ex.features, ex.label, weight * norm, &mut grad)?;
            }
            loss += weight * norm * half;
        }
        Ok((loss, grad))
    }
}

/// Top-1 accuracy of a model over a labeled set.
pub fn evaluate<M: ClassifierModel + ?Sized>(
    model: &M,
    labeled_set: &[crate::classifier::batch::LabeledExample],
) -> Result<f64> {
    if labeled_set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut correct = 0usize;
    for ex in labeled_set {
        let logits = model.forward(&ex.features);
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if pred == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labeled_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::batch::LabeledExample;

    fn ex(features: &[f64], label: usize) -> LabeledExample {
        LabeledExample {
            features: features.to_vec(),
            label,
        }
    }

    #[test]
    fn zero_init_head_gives_uniform_logits() {
        let head = LinearHead::new(3, 4).unwrap();
        let logits = head.forward(&[1.0, -2.0, 0.5]);
        assert_eq!(logits, vec![0.0; 4]);
    }

    #[test]
    fn forward_computes_affine_map() {
        let mut head = LinearHead::new(2, 2).unwrap();
        head.set_trainable_params(&[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]).unwrap();
        let logits = head.forward(&[2.0, 3.0]);
        assert_eq!(logits, vec![2.5, 2.5]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        let mut head = LinearHead::new(2, 3).unwrap();
        head.set_trainable_params(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -1.0, 0.0, 1.0])
            .unwrap();
        head.save(&path).unwrap();
        assert_eq!(LinearHead::load(&path).unwrap(), head);
    }

    /// Oracle model emitting a huge logit for the true class; used by the
    /// evaluate tests.
    struct OracleModel {
        n: usize,
        truth: Vec<(Vec<f64>, usize)>,
    }

    impl ClassifierModel for OracleModel {
        fn forward(&self, input: &[f64]) -> Vec<f64> {
            let label = self
                .truth
                .iter()
                .find(|(f, _)| f == input)
                .map(|(_, l)| *l)
                .unwrap();
            let mut logits = vec![0.0; self.n];
            logits[label] = 100.0;
            logits
        }
        fn num_classes(&self) -> usize {
            self.n
        }
    }

    #[test]
    fn oracle_model_scores_one() {
        let set = vec![ex(&[0.0], 0), ex(&[1.0], 1), ex(&[2.0], 1)];
        let oracle = OracleModel {
            n: 2,
            truth: set.iter().map(|e| (e.features.clone(), e.label)).collect(),
        };
        assert_eq!(evaluate(&oracle, &set).unwrap(), 1.0);
    }

    #[test]
    fn constant_model_scores_at_the_balanced_baseline() {
        // zero-init head predicts class 0 everywhere (first argmax)
        let head = LinearHead::new(1, 4).unwrap();
        let set: Vec<LabeledExample> = (0..4)
            .flat_map(|c| (0..5).map(move |k| ex(&[k as f64], c)))
            .collect();
        assert_eq!(evaluate(&head, &set).unwrap(), 0.25);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let mut head = LinearHead::new(2, 2).unwrap();
        head.set_trainable_params(&[0.3, -0.1, -0.3, 0.1, 0.0, 0.0]).unwrap();
        let set: Vec<LabeledExample> =
            (0..50).map(|k| ex(&[k as f64 * 0.1, -k as f64 * 0.1], (k % 2) as usize)).collect();
        let a = evaluate(&head, &set).unwrap();
        let b = evaluate(&head, &set).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn evaluate_rejects_empty_set() {
        let head = LinearHead::new(1, 2).unwrap();
        assert!(evaluate(&head, &[]).is_err());
    }

    #[test]
    fn analytic_gradient_matches_loss_computed_through_forward() {
        // consistency: loss from loss_and_grad equals weighted_loss over the
        // same forwards
        use crate::classifier::loss::weighted_loss;
        let mut head = LinearHead::new(2, 3).unwrap();
        head.set_trainable_params(&[0.2, -0.4, 0.1, 0.3, -0.2, 0.5, 0.05, -0.05, 0.0])
            .unwrap();
        let batch = TrainingBatch {
            real: vec![ex(&[1.0, 2.0], 0), ex(&[-1.0, 0.5], 2)],
            synth: vec![ex(&[0.3, -0.3], 1)],
        };
        let (loss, _) = head.loss_and_grad(&batch, 0.8, LossReduction::Sum).unwrap();
        let real_logits: Vec<Vec<f64>> = batch.real.iter().map(|e| head.forward(&e.features)).collect();
        let synth_logits: Vec<Vec<f64>> = batch.synth.iter().map(|e| head.forward(&e.features)).collect();
        let reference = weighted_loss(
            &real_logits,
            &[0, 2],
            &synth_logits,
            &[1],
            0.8,
            LossReduction::Sum,
        )
        .unwrap();
        assert!((loss - reference).abs() < 1e-12);
    }
}
