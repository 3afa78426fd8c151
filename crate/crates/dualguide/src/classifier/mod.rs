//! Few-shot classifier harness: mixed real/synthetic batches, the weighted
//! cross-entropy objective, and an AdamW training loop over adapter-style
//! trainable parameters.

pub mod batch;
pub mod loss;
pub mod model;
pub mod train;

pub use batch::{compose_batch, LabeledExample, TrainingBatch};
pub use loss::{cross_entropy, weighted_loss, LossReduction};
pub use model::{evaluate, ClassifierModel, LinearHead, TrainableClassifier};
pub use train::{
    sweep_learning_rates, train, AdamW, EpochRecord, TrainConfig, TrainReport,
};
