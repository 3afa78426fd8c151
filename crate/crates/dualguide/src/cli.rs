//! Command implementations behind the binary: `similarity`, `generate`,
//! `train`, `eval`, `verify`.
//!
//! Exit-status contract: 0 success, 1 property or partial failure, 2 input
//! error, 3 environment/backend error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{
    evaluate, sweep_learning_rates, train, LabeledExample, LinearHead, TrainReport,
};
use crate::config::PipelineConfig;
use crate::dataset::{self, FewShotDataset, GuideSource};
use crate::embeddings;
use crate::error::{Error, Result};
use crate::generation::{
    build_plan, run, AnalyticImageBackend, BackendSelection, GenerationManifest, RunOptions,
    RunSummary,
};
use crate::similarity::{class_similarity_matrix, ClassSimilarityMatrix};
use crate::verify::{self, CheckOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ENV: i32 = 3;

/// Map an error to the stable exit-status contract.
pub fn exit_code_for_error(error: &Error) -> i32 {
    match error.root() {
        Error::BackendUnavailable(_) => EXIT_ENV,
        Error::Diverged { .. } => EXIT_FAILURE,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityOutcome {
    pub artifact: PathBuf,
    pub top_pairs: Vec<(String, String, f64)>,
}

/// Build the class-similarity artifact from the embedding file.
pub fn cmd_similarity(config: &PipelineConfig) -> Result<SimilarityOutcome> {
    let table = embeddings::read_embedding_file(
        &config.similarity.embeddings,
        &config.similarity.class_names,
    )?;
    let matrix = class_similarity_matrix(&table, config.similarity.temperature)?;
    let artifact = &config.similarity.artifact;
    if let Some(parent) = artifact.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text =
        serde_json::to_string_pretty(&matrix).expect("matrix serialization cannot fail");
    fs::write(artifact, text).map_err(|e| Error::io(artifact, e))?;

    let top_pairs: Vec<(String, String, f64)> = matrix
        .top_pairs(3)
        .into_iter()
        .map(|(i, j, s)| {
            (
                matrix.class_names[i].clone(),
                matrix.class_names[j].clone(),
                s,
            )
        })
        .collect();
    println!(
        "similarity: {} classes, artifact {}",
        matrix.n_classes(),
        artifact.display()
    );
    println!("most similar class pairs:");
    for (a, b, s) in &top_pairs {
        println!("  {a} ~ {b}: {s:.4}");
    }
    Ok(SimilarityOutcome {
        artifact: artifact.clone(),
        top_pairs,
    })
}

pub fn load_similarity_artifact(path: &Path) -> Result<ClassSimilarityMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let matrix: ClassSimilarityMatrix =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    matrix.validate()?;
    Ok(matrix)
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub dry_run: bool,
    pub manifest_path: PathBuf,
    pub summary: RunSummary,
}

/// Plan and execute generation. Exit is 0 only when every item succeeded.
pub fn cmd_generate(
    config: &PipelineConfig,
    seed_override: Option<u64>,
    dry_run: bool,
    workers: usize,
) -> Result<GenerateOutcome> {
    let matrix = load_similarity_artifact(&config.similarity.artifact)?;
    let dataset = FewShotDataset::load(&config.dataset.root, config.dataset.n_shots)?;
    let schedule = config.generation.schedule_params().build()?;

    let backend = match config.generation.backend {
        BackendSelection::Analytic => AnalyticImageBackend::from_dataset(
            &dataset,
            schedule.clone(),
            config.generation.analytic,
        )?,
        BackendSelection::External => {
            let external = config.generation.external.as_ref().expect("validated");
            return Err(Error::BackendUnavailable(format!(
                "external backend {:?} on {:?} is a configuration contract; \
                 no model runtime is bundled with this toolkit",
                external.model, external.device
            )));
        }
    };

    let master_seed = seed_override.unwrap_or(config.dataset.seed);
    let template = config.generation.resolved_template();
    let plan = build_plan(
        &dataset,
        &matrix,
        config.generation.n_synth_per_class,
        &config.generation.weights,
        &template,
        master_seed,
    )?;

    if dry_run {
        println!(
            "dry run: {} items ({} classes x {} per class), seed {master_seed}",
            plan.len(),
            dataset.n_classes(),
            config.generation.n_synth_per_class
        );
        for item in plan.iter().take(4) {
            println!(
                "  [{}] {} <- +{} / -{} (seed {})",
                item.item_index,
                item.prompt,
                item.positive_image.display(),
                item.negative_image.display(),
                item.seed
            );
        }
        if plan.len() > 4 {
            println!("  ... {} more", plan.len() - 4);
        }
        return Ok(GenerateOutcome {
            dry_run: true,
            manifest_path: config.generation.manifest.clone(),
            summary: RunSummary {
                total: plan.len(),
                succeeded: 0,
                failed: 0,
            },
        });
    }

    let (manifest, summary) = run(
        &plan,
        &dataset,
        &backend,
        &schedule,
        &config.generation.augmentation,
        &config.generation.out_dir,
        &RunOptions {
            workers: workers.max(1),
        },
    )?;
    manifest.write(&config.generation.manifest)?;
    println!(
        "generate: {} items, {} succeeded, {} failed -> {}",
        summary.total,
        summary.succeeded,
        summary.failed,
        config.generation.manifest.display()
    );
    if summary.failed > 0 {
        for record in manifest.records.iter().filter(|r| !r.succeeded()) {
            println!(
                "  failed item {}: {}",
                record.item_index,
                record.error.as_deref().unwrap_or("unknown")
            );
        }
    }
    Ok(GenerateOutcome {
        dry_run: false,
        manifest_path: config.generation.manifest.clone(),
        summary,
    })
}

/// Saved classifier: the linear head plus the class ordering it was trained
/// with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub class_names: Vec<String>,
    pub model: LinearHead,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub report: TrainReport,
    pub chosen_learning_rate: f64,
}

/// Train the classifier on the few-shot reals plus the generated pool.
pub fn cmd_train(config: &PipelineConfig, seed_override: Option<u64>) -> Result<TrainOutcome> {
    let dataset = FewShotDataset::load(&config.dataset.root, config.dataset.n_shots)?;
    let real_pool = load_real_pool(&dataset)?;
    let manifest = GenerationManifest::read(&config.generation.manifest)?;
    let synth_pool = load_synth_pool(&manifest, &dataset, &config.generation.out_dir)?;
    if synth_pool.is_empty() {
        return Err(Error::invalid(
            "manifest contains no successful synthetic outputs",
        ));
    }
    let dim = real_pool[0].features.len();
    for ex in real_pool.iter().chain(&synth_pool) {
        if ex.features.len() != dim {
            return Err(Error::invalid(
                "real and synthetic feature dimensions disagree",
            ));
        }
    }

    let seed = seed_override.unwrap_or(config.dataset.seed);
    let base_model = LinearHead::new(dim, dataset.n_classes())?;
    let (rate, model, mut report) = match &config.training.learning_rate_sweep {
        Some(rates) => {
            let results = sweep_learning_rates(
                &base_model,
                &real_pool,
                &synth_pool,
                None,
                &config.training.train,
                rates,
                seed,
            )?;
            println!("learning-rate sweep:");
            for (rate, _, report) in &results {
                println!(
                    "  lr {rate:.6}: final val accuracy {:.4}",
                    report.final_val_accuracy
                );
            }
            results
                .into_iter()
                .max_by(|a, b| a.2.final_val_accuracy.total_cmp(&b.2.final_val_accuracy))
                .expect("sweep list is non-empty")
        }
        None => {
            let mut model = base_model;
            let report = train(
                &mut model,
                &real_pool,
                &synth_pool,
                None,
                &config.training.train,
                seed,
            )?;
            (config.training.train.learning_rate, model, report)
        }
    };

    let checkpoint = Checkpoint {
        class_names: dataset.classes().to_vec(),
        model,
    };
    checkpoint.save(&config.training.checkpoint)?;
    report.checkpoint = Some(config.training.checkpoint.display().to_string());
    report.write(&config.training.report)?;
    println!(
        "train: {} epochs, lr {rate}, final val accuracy {:.4} ({}), report {}",
        report.epochs.len(),
        report.final_val_accuracy,
        report.validation_source,
        config.training.report.display()
    );
    Ok(TrainOutcome {
        report_path: config.training.report.clone(),
        checkpoint_path: config.training.checkpoint.clone(),
        report,
        chosen_learning_rate: rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub examples: usize,
}

/// Evaluate the saved checkpoint on the held-out labeled set.
pub fn cmd_eval(config: &PipelineConfig) -> Result<EvalOutcome> {
    let eval_root = config.dataset.eval_root.as_ref().ok_or_else(|| {
        Error::Config("eval requires dataset.eval_root to be set".into())
    })?;
    let checkpoint = Checkpoint::load(&config.training.checkpoint)?;
    let pool = load_labeled_dir(eval_root, &checkpoint.class_names)?;
    let accuracy = evaluate(&checkpoint.model, &pool)?;
    let outcome = EvalOutcome {
        accuracy,
        examples: pool.len(),
    };
    println!(
        "eval: top-1 accuracy {:.4} over {} examples",
        outcome.accuracy, outcome.examples
    );
    if let Some(path) = &config.training.eval_report {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text =
            serde_json::to_string_pretty(&outcome).expect("outcome serialization cannot fail");
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(outcome)
}

/// Run the oracle suite; with a mutation, run the demonstration pair
/// (reductions still pass, the moment oracle must fail).
pub fn cmd_verify(mutate: bool) -> (Vec<CheckOutcome>, i32) {
    let outcomes = if mutate {
        println!("verify (mutation mode: negative guidance sign flipped)");
        verify::run_mutation_demo()
    } else {
        verify::run_all()
    };
    print_outcome_table(&outcomes);
    let all_passed = outcomes.iter().all(|o| o.passed);
    let code = if all_passed { EXIT_OK } else { EXIT_FAILURE };
    if !all_passed {
        let failed: Vec<&str> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.name)
            .collect();
        println!("failed checks: {failed:?}");
    }
    (outcomes, code)
}

pub fn print_outcome_table(outcomes: &[CheckOutcome]) {
    for o in outcomes {
        println!(
            "criterion {:>2}  {:<36} {}  ({} ms)  {}",
            o.criterion,
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.millis,
            o.detail
        );
    }
}

/// Real training pool: the few-shot vectors with their class labels.
fn load_real_pool(dataset: &FewShotDataset) -> Result<Vec<LabeledExample>> {
    let mut pool = Vec::new();
    for class in 0..dataset.n_classes() {
        for shot in 0..dataset.n_shots() {
            let path = dataset.shot_path(class, shot);
            let features = require_vector(&path)?;
            pool.push(LabeledExample {
                features,
                label: class,
            });
        }
    }
    Ok(pool)
}

/// Synthetic pool from the manifest: each successful record's output vector,
/// labeled with its target class. Class names must agree with the dataset.
pub fn load_synth_pool(
    manifest: &GenerationManifest,
    dataset: &FewShotDataset,
    out_dir: &Path,
) -> Result<Vec<LabeledExample>> {
    let mut mismatched: Vec<String> = Vec::new();
    for record in &manifest.records {
        let known = dataset
            .class_index(&record.target_class)
            .is_some_and(|i| i == record.target_class_index);
        if !known && !mismatched.contains(&record.target_class) {
            mismatched.push(record.target_class.clone());
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Config(format!(
            "manifest classes do not match the dataset: {mismatched:?}"
        )));
    }
    let mut pool = Vec::new();
    for record in manifest.records.iter().filter(|r| r.succeeded()) {
        let rel = record.output.as_ref().expect("successful record has output");
        let features = require_vector(&out_dir.join(rel))?;
        pool.push(LabeledExample {
            features,
            label: record.target_class_index,
        });
    }
    Ok(pool)
}

/// Load every vector file under `root/<class>/` for the given class list.
/// Unknown class directories are input errors, named explicitly.
fn load_labeled_dir(root: &Path, class_names: &[String]) -> Result<Vec<LabeledExample>> {
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "labeled directory {} does not exist",
            root.display()
        )));
    }
    let index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut unknown = Vec::new();
    let mut pool = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let Some(&label) = index.get(name.as_str()) else {
            unknown.push(name);
            continue;
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            pool.push(LabeledExample {
                features: require_vector(&file)?,
                label,
            });
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "labeled directory {} has classes unknown to the checkpoint: {unknown:?}",
            root.display()
        )));
    }
    if pool.is_empty() {
        return Err(Error::Config(format!(
            "labeled directory {} contains no examples",
            root.display()
        )));
    }
    Ok(pool)
}

fn require_vector(path: &Path) -> Result<Vec<f64>> {
    match dataset::load_guide(path)? {
        GuideSource::Vector(v) => Ok(v),
        GuideSource::Raster(_) => Err(Error::Config(format!(
            "{} is a raster image; the training harness consumes feature vectors \
             (encode images with an external embedding model first)",
            path.display()
        ))),
    }
}

