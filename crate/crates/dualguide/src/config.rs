//! Pipeline configuration: one TOML file drives every command. Unknown keys
//! are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::generation::{
    AnalyticBackendParams, AugmentationConfig, BackendSelection, ExternalBackendConfig,
};
use crate::guidance::GuidanceWeights;
use crate::schedule::ScheduleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub similarity: SimilarityConfig,
    pub generation: GenerationConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Few-shot dataset root: `root/<class_name>/<files>`.
    pub root: PathBuf,
    pub n_shots: usize,
    pub seed: u64,
    /// Held-out labeled set for `eval`, same layout as `root`.
    #[serde(default)]
    pub eval_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityConfig {
    /// Binary embedding file (see the embeddings module for the layout).
    pub embeddings: PathBuf,
    /// Sidecar class-name list, one name per line, index-ordered.
    pub class_names: PathBuf,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Where the similarity matrix artifact is written/read.
    pub artifact: PathBuf,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default = "default_n_synth")]
    pub n_synth_per_class: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_final_alpha_bar")]
    pub final_alpha_bar: f64,
    /// Prompt template with one `{}` placeholder. When absent,
    /// `dataset_kind` selects a built-in formulation, else the default
    /// template applies.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub dataset_kind: Option<String>,
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
    #[serde(default)]
    pub backend: BackendSelection,
    /// Guidance scales are tuned per dataset; they must be set explicitly.
    pub weights: GuidanceWeights,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub analytic: AnalyticBackendParams,
    #[serde(default)]
    pub external: Option<ExternalBackendConfig>,
}

fn default_n_synth() -> usize {
    200
}
fn default_steps() -> usize {
    50
}
fn default_train_steps() -> usize {
    1000
}
fn default_final_alpha_bar() -> f64 {
    1e-4
}

impl GenerationConfig {
    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            train_steps: self.train_steps,
            num_inference_steps: self.steps,
            final_alpha_bar: self.final_alpha_bar,
        }
    }

    pub fn resolved_template(&self) -> String {
        if let Some(t) = &self.template {
            return t.clone();
        }
        if let Some(kind) = &self.dataset_kind {
            if let Some(t) = crate::generation::builtin_template(kind) {
                return t.to_string();
            }
        }
        crate::generation::DEFAULT_TEMPLATE.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Optional learning-rate sweep; the best rate by final validation
    /// accuracy wins and its checkpoint is the one saved.
    #[serde(default)]
    pub learning_rate_sweep: Option<Vec<f64>>,
    pub report: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub eval_report: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_shots == 0 {
            return Err(Error::Config("dataset.n_shots must be >= 1".into()));
        }
        if !(self.similarity.temperature > 0.0 && self.similarity.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "similarity.temperature must be positive, got {}",
                self.similarity.temperature
            )));
        }
        let g = &self.generation;
        if g.n_synth_per_class == 0 {
            return Err(Error::Config("generation.n_synth_per_class must be >= 1".into()));
        }
        if g.steps == 0 {
            return Err(Error::Config("generation.steps must be >= 1".into()));
        }
        g.schedule_params().build()?;
        g.weights
            .validate()
            .map_err(|e| Error::Config(format!("generation.weights: {e}")))?;
        g.augmentation.validate()?;
        g.analytic.validate()?;
        if matches!(g.backend, BackendSelection::External) && g.external.is_none() {
            return Err(Error::Config(
                "generation.backend = \"external\" requires a [generation.external] section".into(),
            ));
        }
        // template must be well-formed even before any class name exists
        crate::generation::make_prompt("probe", &g.resolved_template())
            .map_err(|e| Error::Config(format!("generation.template: {e}")))?;
        self.training.train.validate()?;
        if let Some(rates) = &self.training.learning_rate_sweep {
            if rates.is_empty() {
                return Err(Error::Config("training.learning_rate_sweep is empty".into()));
            }
            for &r in rates {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Config(format!(
                        "training.learning_rate_sweep entry must be positive, got {r}"
                    )));
                }
            }
        }
        Ok(())
    }
}
