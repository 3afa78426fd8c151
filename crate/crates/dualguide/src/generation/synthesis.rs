//! Synthesis backends: the denoiser plus what `run` needs around it —
//! encoding guide images into branch conditions and writing output
//! artifacts.
//!
//! Two backends exist behind the same contract: the analytic Gaussian
//! backend (runnable everywhere, used for verification and the toy
//! pipeline) and an external latent-diffusion adapter that is specified by
//! configuration contract only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{AnalyticBackend, DenoiserBackend, DiffusionState, GaussianCondition};
use crate::dataset::{self, FewShotDataset, GuideSource};
use crate::error::{Error, Result};
use crate::guidance::{ConditionSet, NoisePredictionQuad};
use crate::schedule::NoiseSchedule;

/// Everything the runner knows about one item when asking the backend for
/// branch conditions.
pub struct ConditionRequest<'a> {
    pub prompt: &'a str,
    pub target_class: &'a str,
    pub positive: &'a GuideSource,
    pub negative: Option<&'a GuideSource>,
}

/// A denoiser backend that can also encode guide images into conditions and
/// persist final samples.
pub trait SynthesisBackend: DenoiserBackend {
    fn backend_id(&self) -> &str;

    fn encode(&self, request: &ConditionRequest<'_>) -> Result<ConditionSet<Self::Condition>>;

    /// File extension of output artifacts (without the dot).
    fn output_extension(&self) -> &str;

    fn write_output(&self, sample: &[f64], path: &Path) -> Result<()>;
}

/// Tunables for the analytic backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticBackendParams {
    /// Variance of the exemplar-conditioned branches (text+positive and
    /// text+positive+negative).
    pub exemplar_variance: f64,
    /// Variance of the text-conditioned (class-level) branch.
    pub class_variance: f64,
    /// Variance of the unconditional branch.
    pub uncond_variance: f64,
    /// Raster guides are downsampled to this square side before embedding.
    pub raster_patch: u32,
}

impl Default for AnalyticBackendParams {
    fn default() -> Self {
        AnalyticBackendParams {
            exemplar_variance: 0.05,
            class_variance: 0.25,
            uncond_variance: 1.0,
            raster_patch: 8,
        }
    }
}

impl AnalyticBackendParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("exemplar_variance", self.exemplar_variance),
            ("class_variance", self.class_variance),
            ("uncond_variance", self.uncond_variance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "analytic backend {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.raster_patch == 0 {
            return Err(Error::Config("raster_patch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Analytic Gaussian synthesis backend.
///
/// Guide artifacts embed to feature vectors (vectors pass through; rasters
/// are downsampled grayscale patches). The text branch is the target class's
/// Gaussian (class mean over the few-shot embeddings), the exemplar branches
/// are Gaussians centered on the embedded guides, and the unconditional
/// branch is the global Gaussian over all shots.
pub struct AnalyticImageBackend {
    core: AnalyticBackend,
    class_conditions: BTreeMap<String, GaussianCondition>,
    params: AnalyticBackendParams,
}

pub const ANALYTIC_BACKEND_ID: &str = "analytic-gaussian";

impl AnalyticImageBackend {
    /// Build from a dataset: embed every shot, estimate per-class means and
    /// the global mean.
    pub fn from_dataset(
        dataset: &FewShotDataset,
        schedule: NoiseSchedule,
        params: AnalyticBackendParams,
    ) -> Result<Self> {
        params.validate()?;
        let mut class_means: Vec<Vec<f64>> = Vec::with_capacity(dataset.n_classes());
        let mut global_mean: Option<Vec<f64>> = None;
        let mut total = 0usize;

        for class in 0..dataset.n_classes() {
            let mut mean: Option<Vec<f64>> = None;
            for shot in 0..dataset.n_shots() {
                let guide = dataset::load_guide(&dataset.shot_path(class, shot))?;
                let v = embed_guide(&guide, params.raster_patch);
                accumulate(&mut mean, &v)?;
                accumulate(&mut global_mean, &v)?;
                total += 1;
            }
            let mut mean = mean.expect("n_shots >= 1");
            scale(&mut mean, 1.0 / dataset.n_shots() as f64);
            class_means.push(mean);
        }
        let mut global = global_mean.expect("dataset is non-empty");
        scale(&mut global, 1.0 / total as f64);

        let uncond = GaussianCondition::new(global, params.uncond_variance)?;
        let class_conditions = dataset
            .classes()
            .iter()
            .zip(class_means)
            .map(|(name, mean)| {
                GaussianCondition::new(mean, params.class_variance).map(|c| (name.clone(), c))
            })
            .collect::<Result<_>>()?;

        Ok(AnalyticImageBackend {
            core: AnalyticBackend::new(uncond, schedule),
            class_conditions,
            params,
        })
    }

    pub fn core(&self) -> &AnalyticBackend {
        &self.core
    }

    pub fn params(&self) -> &AnalyticBackendParams {
        &self.params
    }

    pub fn class_condition(&self, class: &str) -> Option<&GaussianCondition> {
        self.class_conditions.get(class)
    }

    fn embed(&self, guide: &GuideSource) -> Result<Vec<f64>> {
        let v = embed_guide(guide, self.params.raster_patch);
        if v.len() != self.core.latent_dim() {
            return Err(Error::invalid(format!(
                "guide embeds to dimension {}, backend expects {}",
                v.len(),
                self.core.latent_dim()
            )));
        }
        Ok(v)
    }
}

fn accumulate(acc: &mut Option<Vec<f64>>, v: &[f64]) -> Result<()> {
    match acc {
        None => {
            *acc = Some(v.to_vec());
            Ok(())
        }
        Some(total) => {
            if total.len() != v.len() {
                return Err(Error::invalid(format!(
                    "guide embeddings disagree in dimension: {} vs {}",
                    total.len(),
                    v.len()
                )));
            }
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
            Ok(())
        }
    }
}

fn scale(v: &mut [f64], factor: f64) {
    for x in v.iter_mut() {
        *x *= factor;
    }
}

/// Vectors pass through; rasters become normalized grayscale patches.
pub fn embed_guide(guide: &GuideSource, raster_patch: u32) -> Vec<f64> {
    match guide {
        GuideSource::Vector(v) => v.clone(),
        GuideSource::Raster(img) => {
            let small = img
                .resize_exact(raster_patch, raster_patch, image::imageops::FilterType::Triangle)
                .to_luma8();
            small.pixels().map(|p| p[0] as f64 / 255.0).collect()
        }
    }
}

impl DenoiserBackend for AnalyticImageBackend {
    type Condition = GaussianCondition;

    fn evaluate(
        &self,
        state: &DiffusionState,
        conditions: &ConditionSet<GaussianCondition>,
    ) -> Result<NoisePredictionQuad> {
        self.core.evaluate(state, conditions)
    }

    fn latent_dim(&self) -> usize {
        self.core.latent_dim()
    }
}

impl SynthesisBackend for AnalyticImageBackend {
    fn backend_id(&self) -> &str {
        ANALYTIC_BACKEND_ID
    }

    fn encode(&self, request: &ConditionRequest<'_>) -> Result<ConditionSet<GaussianCondition>> {
        let text = self
            .class_conditions
            .get(request.target_class)
            .cloned()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "backend has no class condition for {:?}",
                    request.target_class
                ))
            })?;
        let positive =
            GaussianCondition::new(self.embed(request.positive)?, self.params.exemplar_variance)?;
        match request.negative {
            Some(neg) => {
                let negative =
                    GaussianCondition::new(self.embed(neg)?, self.params.exemplar_variance)?;
                Ok(ConditionSet::dual(text, positive, negative))
            }
            None => Ok(ConditionSet::with_positive(text, positive)),
        }
    }

    fn output_extension(&self) -> &str {
        "json"
    }

    fn write_output(&self, sample: &[f64], path: &Path) -> Result<()> {
        dataset::write_vector(path, sample)
    }
}

/// Which synthesis backend a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendSelection {
    #[default]
    Analytic,
    External,
}

/// How the unconditional / text-only branches represent "no image prompt" in
/// an external adapter; the underlying models differ here and no fidelity
/// claim is made for either choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentImageMode {
    ZeroedEmbedding,
    DropAdapter,
}

/// Whether the unconditional branch uses an empty text prompt or a learned
/// null embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullTextMode {
    EmptyPrompt,
    LearnedNull,
}

/// Configuration contract for an external latent-diffusion + image-adapter
/// backend. Loading the actual model weights is outside this crate; the
/// fields pin down what an adapter implementation must accept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalBackendConfig {
    /// Generative model identifier.
    pub model: String,
    /// Image-prompt adapter identifier.
    pub image_adapter: String,
    /// Device string, e.g. "cuda:0".
    pub device: String,
    pub null_text_mode: NullTextMode,
    pub absent_image_mode: AbsentImageMode,
}
