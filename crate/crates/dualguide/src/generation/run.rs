//! Plan execution: augment guides, encode conditions, run the guided
//! sampler, persist outputs, and record provenance.
//!
//! Per-item failures are recorded in the manifest and do not abort the run;
//! long generation runs must survive transient backend faults. All
//! randomness is fixed at plan time, so results are independent of worker
//! count and execution order.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::dataset::{self, FewShotDataset, GuideSource};
use crate::error::{Error, Result};
use crate::generation::augment::{augment, AppliedAugmentation, AugmentationConfig};
use crate::generation::manifest::{
    AugmentationRecord, GenerationManifest, GenerationManifestRecord,
};
use crate::generation::plan::GenerationPlanItem;
use crate::generation::synthesis::{ConditionRequest, SynthesisBackend};
use crate::rng::{self, tag};
use crate::sampler::sample;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Execute a plan against a backend. Returns the manifest (one record per
/// item, in plan order) and a success/failure summary.
pub fn run<B>(
    plan: &[GenerationPlanItem],
    dataset: &FewShotDataset,
    backend: &B,
    schedule: &NoiseSchedule,
    augmentation: &AugmentationConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<(GenerationManifest, RunSummary)>
where
    B: SynthesisBackend + Sync,
    B::Condition: Send,
{
    augmentation.validate()?;
    let schedule_params = schedule.params();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for item in plan {
        let class_dir = out_dir.join(&item.target_class_name);
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
    }

    let execute = |item: &GenerationPlanItem| -> GenerationManifestRecord {
        let started = Instant::now();
        let outcome = run_item(item, dataset, backend, schedule, augmentation, out_dir);
        let duration_ms = started.elapsed().as_millis() as u64;
        let (output, aug_record, error) = match outcome {
            Ok((output, aug_record)) => (Some(output), aug_record, None),
            Err(e) => (
                None,
                AugmentationRecord {
                    enabled: augmentation.enabled,
                    ..Default::default()
                },
                Some(e.to_string()),
            ),
        };
        GenerationManifestRecord {
            item_index: item.item_index,
            target_class: item.target_class_name.clone(),
            target_class_index: item.target_class,
            positive_image: item.positive_image.to_string_lossy().into_owned(),
            negative_class: item.negative_class_name.clone(),
            negative_class_index: item.negative_class,
            negative_image: item.negative_image.to_string_lossy().into_owned(),
            prompt: item.prompt.clone(),
            weights: item.weights,
            seed: item.seed,
            output,
            schedule: schedule_params,
            augmentation: aug_record,
            backend: backend.backend_id().to_string(),
            duration_ms,
            error,
        }
    };

    let records: Vec<GenerationManifestRecord> = if options.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            plan.par_iter().map(execute).collect()
        })
    } else {
        plan.iter().map(execute).collect()
    };

    let failed = records.iter().filter(|r| !r.succeeded()).count();
    let summary = RunSummary {
        total: records.len(),
        succeeded: records.len() - failed,
        failed,
    };
    Ok((GenerationManifest::new(records), summary))
}

fn run_item<B: SynthesisBackend>(
    item: &GenerationPlanItem,
    dataset: &FewShotDataset,
    backend: &B,
    schedule: &NoiseSchedule,
    augmentation: &AugmentationConfig,
    out_dir: &Path,
) -> Result<(String, AugmentationRecord)> {
    let positive = dataset::load_guide(&dataset.resolve(&item.positive_image))?;
    let negative = dataset::load_guide(&dataset.resolve(&item.negative_image))?;

    // independent augmentation streams for the two guides, both derived from
    // the item seed
    let (positive, aug_pos) = augment_guide(positive, augmentation, item.seed, tag::AUGMENT_POSITIVE)?;
    let (negative, aug_neg) = augment_guide(negative, augmentation, item.seed, tag::AUGMENT_NEGATIVE)?;

    let conditions = backend.encode(&ConditionRequest {
        prompt: &item.prompt,
        target_class: &item.target_class_name,
        positive: &positive,
        negative: Some(&negative),
    })?;
    let output = sample(backend, &conditions, &item.weights, schedule, item.seed)?;

    let rel_path = format!(
        "{}/{:05}.{}",
        item.target_class_name,
        item.within_class_index,
        backend.output_extension()
    );
    backend.write_output(&output, &out_dir.join(&rel_path))?;
    Ok((
        rel_path,
        AugmentationRecord {
            enabled: augmentation.enabled,
            positive: aug_pos,
            negative: aug_neg,
        },
    ))
}

/// Raster guides get the configured augmentation; vector guides pass
/// through (no raster operations apply to them).
fn augment_guide(
    guide: GuideSource,
    cfg: &AugmentationConfig,
    item_seed: u64,
    stream_tag: u64,
) -> Result<(GuideSource, Option<AppliedAugmentation>)> {
    match guide {
        GuideSource::Raster(img) => {
            let mut stream = rng::stream(item_seed, stream_tag, 0);
            let (out, applied) = augment(&img, cfg, &mut stream)?;
            Ok((GuideSource::Raster(out), applied))
        }
        vector => Ok((vector, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::DiffusionState;
    use crate::dataset::{write_shots_list, write_vector};
    use crate::generation::plan::build_plan;
    use crate::generation::synthesis::{AnalyticBackendParams, AnalyticImageBackend};
    use crate::guidance::{ConditionSet, GuidanceWeights, NoisePredictionQuad};
    use crate::sampler::tilted_moments;
    use crate::similarity::{class_similarity_matrix, EmbeddingTable};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn toy_dataset(dir: &Path) -> FewShotDataset {
        let mut entries = Vec::new();
        for (c, class) in ["low", "high"].iter().enumerate() {
            let class_dir = dir.join(class);
            fs::create_dir_all(&class_dir).unwrap();
            let mut files = Vec::new();
            for k in 0..3 {
                let name = format!("s{k}.json");
                let base = if c == 0 { -1.5 } else { 1.5 };
                write_vector(&class_dir.join(&name), &[base + 0.05 * k as f64, base]).unwrap();
                files.push(name);
            }
            entries.push((class.to_string(), files));
        }
        write_shots_list(dir, &entries).unwrap();
        FewShotDataset::load(dir, 3).unwrap()
    }

    fn matrix_from_shots(ds: &FewShotDataset) -> crate::similarity::ClassSimilarityMatrix {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for c in 0..ds.n_classes() {
            for s in 0..ds.n_shots() {
                vectors.push(dataset::read_vector(&ds.shot_path(c, s)).unwrap());
                labels.push(c);
            }
        }
        let table = EmbeddingTable::new(vectors, labels, ds.classes().to_vec()).unwrap();
        class_similarity_matrix(&table, 1.0).unwrap()
    }

    fn setup(
        dir: &Path,
    ) -> (
        FewShotDataset,
        Vec<GenerationPlanItem>,
        AnalyticImageBackend,
        NoiseSchedule,
    ) {
        let ds = toy_dataset(dir);
        let matrix = matrix_from_shots(&ds);
        let weights = GuidanceWeights::new(1.0, 0.8, 0.3).unwrap();
        let plan = build_plan(&ds, &matrix, 2, &weights, "A photo of a {}", 99).unwrap();
        let schedule = NoiseSchedule::linear(1000, 1e-4, 50).unwrap();
        let backend =
            AnalyticImageBackend::from_dataset(&ds, schedule.clone(), AnalyticBackendParams::default())
                .unwrap();
        (ds, plan, backend, schedule)
    }

    #[test]
    fn run_produces_outputs_within_tilted_envelope() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, plan, backend, schedule) = setup(dir.path());
        let out_dir = dir.path().join("synth");
        let (manifest, summary) = run(
            &plan,
            &ds,
            &backend,
            &schedule,
            &AugmentationConfig::disabled(),
            &out_dir,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(summary, RunSummary { total: 4, succeeded: 4, failed: 0 });
        assert_eq!(manifest.records.len(), 4);

        for (item, record) in plan.iter().zip(&manifest.records) {
            assert!(record.succeeded());
            let out_path = out_dir.join(record.output.as_ref().unwrap());
            assert!(out_path.is_file());
            let output = dataset::read_vector(&out_path).unwrap();

            // reconstruct the item's conditions and check the output sits
            // inside a 6-sigma envelope of the tilted moments
            let pos = dataset::load_guide(&ds.resolve(&item.positive_image)).unwrap();
            let neg = dataset::load_guide(&ds.resolve(&item.negative_image)).unwrap();
            let conds = backend
                .encode(&ConditionRequest {
                    prompt: &item.prompt,
                    target_class: &item.target_class_name,
                    positive: &pos,
                    negative: Some(&neg),
                })
                .unwrap();
            let (mean, var) =
                tilted_moments(backend.core().uncond(), &conds, &item.weights, 1.0).unwrap();
            let sigma = var.sqrt();
            for (o, m) in output.iter().zip(&mean) {
                assert!(
                    (o - m).abs() <= 6.0 * sigma,
                    "output {o} outside envelope around {m} (sigma {sigma})"
                );
            }
        }
    }

    #[test]
    fn empty_plan_is_a_successful_noop() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _, backend, schedule) = setup(dir.path());
        let (manifest, summary) = run(
            &[],
            &ds,
            &backend,
            &schedule,
            &AugmentationConfig::disabled(),
            &dir.path().join("empty"),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(manifest.records.is_empty());
        assert_eq!(summary.total, 0);
        assert_eq!(summary.failed, 0);
    }

    #[test]
    fn rerun_matches_modulo_durations_and_workers() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, plan, backend, schedule) = setup(dir.path());
        let aug = AugmentationConfig::disabled();
        let (m1, _) = run(
            &plan, &ds, &backend, &schedule, &aug,
            &dir.path().join("a"), &RunOptions::default(),
        )
        .unwrap();
        let (m2, _) = run(
            &plan, &ds, &backend, &schedule, &aug,
            &dir.path().join("b"), &RunOptions { workers: 4 },
        )
        .unwrap();
        assert!(m1.content_eq(&m2));
    }

    /// Wraps a backend and fails encoding for chosen item seeds.
    struct FaultInjectingBackend<'a> {
        inner: &'a AnalyticImageBackend,
        fail_on_call: usize,
        calls: AtomicUsize,
    }

    impl crate::backend::DenoiserBackend for FaultInjectingBackend<'_> {
        type Condition = crate::backend::GaussianCondition;
        fn evaluate(
            &self,
            state: &DiffusionState,
            conditions: &ConditionSet<Self::Condition>,
        ) -> crate::error::Result<NoisePredictionQuad> {
            self.inner.evaluate(state, conditions)
        }
        fn latent_dim(&self) -> usize {
            self.inner.latent_dim()
        }
    }

    impl SynthesisBackend for FaultInjectingBackend<'_> {
        fn backend_id(&self) -> &str {
            "fault-injector"
        }
        fn encode(
            &self,
            request: &ConditionRequest<'_>,
        ) -> crate::error::Result<ConditionSet<Self::Condition>> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call == self.fail_on_call {
                return Err(Error::invalid("injected fault"));
            }
            self.inner.encode(request)
        }
        fn output_extension(&self) -> &str {
            self.inner.output_extension()
        }
        fn write_output(&self, sample: &[f64], path: &Path) -> crate::error::Result<()> {
            self.inner.write_output(sample, path)
        }
    }

    #[test]
    fn per_item_failures_are_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_dataset(dir.path());
        let matrix = matrix_from_shots(&ds);
        let weights = GuidanceWeights::new(1.0, 0.8, 0.3).unwrap();
        let plan = build_plan(&ds, &matrix, 3, &weights, "{}", 7).unwrap();
        assert_eq!(plan.len(), 6);
        let schedule = NoiseSchedule::linear(200, 1e-4, 10).unwrap();
        let inner = AnalyticImageBackend::from_dataset(
            &ds,
            schedule.clone(),
            AnalyticBackendParams::default(),
        )
        .unwrap();
        let backend = FaultInjectingBackend {
            inner: &inner,
            fail_on_call: 2,
            calls: AtomicUsize::new(0),
        };
        let (manifest, summary) = run(
            &plan,
            &ds,
            &backend,
            &schedule,
            &AugmentationConfig::disabled(),
            &dir.path().join("out"),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(summary, RunSummary { total: 6, succeeded: 5, failed: 1 });
        let failed: Vec<_> = manifest.records.iter().filter(|r| !r.succeeded()).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].item_index, 2);
        assert!(failed[0].output.is_none());
        assert!(failed[0].error.as_ref().unwrap().contains("injected fault"));
    }

    #[test]
    fn raster_guides_are_augmented_and_recorded() {
        let dir = tempfile::tempdir().unwrap();
        // raster dataset: two classes of flat-color PNGs
        let mut entries = Vec::new();
        for (c, class) in ["dark", "bright"].iter().enumerate() {
            let class_dir = dir.path().join(class);
            fs::create_dir_all(&class_dir).unwrap();
            let mut files = Vec::new();
            for k in 0..2u8 {
                let name = format!("s{k}.png");
                let level = if c == 0 { 40 + 10 * k } else { 200 + 10 * k };
                let img = image::RgbaImage::from_pixel(16, 16, image::Rgba([level, level, level, 255]));
                img.save(class_dir.join(&name)).unwrap();
                files.push(name);
            }
            entries.push((class.to_string(), files));
        }
        write_shots_list(dir.path(), &entries).unwrap();
        let ds = FewShotDataset::load(dir.path(), 2).unwrap();

        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for s in 0..2 {
                let guide = dataset::load_guide(&ds.shot_path(c, s)).unwrap();
                vectors.push(crate::generation::synthesis::embed_guide(&guide, 4));
                labels.push(c);
            }
        }
        let table = EmbeddingTable::new(vectors, labels, ds.classes().to_vec()).unwrap();
        let matrix = class_similarity_matrix(&table, 1.0).unwrap();

        let weights = GuidanceWeights::new(1.0, 0.6, 0.2).unwrap();
        let plan = build_plan(&ds, &matrix, 2, &weights, "{}", 5).unwrap();
        let schedule = NoiseSchedule::linear(200, 1e-4, 10).unwrap();
        let backend = AnalyticImageBackend::from_dataset(
            &ds,
            schedule.clone(),
            AnalyticBackendParams {
                raster_patch: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let aug = AugmentationConfig::default();
        let (m1, s1) = run(
            &plan, &ds, &backend, &schedule, &aug,
            &dir.path().join("out1"), &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(s1.failed, 0);
        for r in &m1.records {
            assert!(r.augmentation.enabled);
            let ap = r.augmentation.positive.unwrap();
            assert!((0.7..=1.0).contains(&ap.crop_area_fraction));
            assert!(ap.rotation_degrees.abs() <= 15.0);
            let an = r.augmentation.negative.unwrap();
            // independent streams: extremely unlikely to collide
            assert_ne!(ap, an);
        }
        // deterministic rerun, including augmentation draws
        let (m2, _) = run(
            &plan, &ds, &backend, &schedule, &aug,
            &dir.path().join("out2"), &RunOptions::default(),
        )
        .unwrap();
        assert!(m1.content_eq(&m2));
    }
}
