//! Synthetic-image generation: planning, prompting, augmentation, guided
//! sampling, and provenance.

pub mod augment;
pub mod manifest;
pub mod plan;
pub mod prompt;
pub mod run;
pub mod synthesis;

pub use augment::{augment as augment_image, AppliedAugmentation, AugmentationConfig};
pub use manifest::{
    AugmentationRecord, GenerationManifest, GenerationManifestRecord, MANIFEST_SCHEMA,
};
pub use plan::{build_plan, GenerationPlanItem};
pub use prompt::{builtin_template, make_prompt, DEFAULT_TEMPLATE};
pub use run::{run, RunOptions, RunSummary};
pub use synthesis::{
    embed_guide, AbsentImageMode, AnalyticBackendParams, AnalyticImageBackend, BackendSelection,
    ConditionRequest, ExternalBackendConfig, NullTextMode, SynthesisBackend, ANALYTIC_BACKEND_ID,
};
