//! Line-delimited provenance manifest: a schema-versioned header line, then
//! one JSON record per synthetic image.
//!
//! Records link each output to its positive/negative source images, prompt,
//! weights, and seed. The synthetic training label of an output is the
//! record's `target_class`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::augment::AppliedAugmentation;
use crate::guidance::GuidanceWeights;
use crate::schedule::ScheduleParams;

pub const MANIFEST_SCHEMA: &str = "synthesis-manifest/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    schema: String,
}

/// Augmentation provenance for one item: the configured state plus the
/// parameters actually drawn for each guide image (absent for pass-through
/// or vector guides).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AugmentationRecord {
    pub enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub positive: Option<AppliedAugmentation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub negative: Option<AppliedAugmentation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationManifestRecord {
    pub item_index: usize,
    pub target_class: String,
    pub target_class_index: usize,
    pub positive_image: String,
    pub negative_class: String,
    pub negative_class_index: usize,
    pub negative_image: String,
    pub prompt: String,
    pub weights: GuidanceWeights,
    pub seed: u64,
    /// Output path relative to the run's output directory; absent when the
    /// item failed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output: Option<String>,
    pub schedule: ScheduleParams,
    pub augmentation: AugmentationRecord,
    pub backend: String,
    pub duration_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl GenerationManifestRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    /// Equality ignoring wall-clock duration.
    pub fn content_eq(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.duration_ms = 0;
        b.duration_ms = 0;
        a == b
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationManifest {
    pub records: Vec<GenerationManifestRecord>,
}

impl GenerationManifest {
    pub fn new(records: Vec<GenerationManifestRecord>) -> Self {
        GenerationManifest { records }
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.succeeded()).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let header = serde_json::to_string(&ManifestHeader {
            schema: MANIFEST_SCHEMA.to_string(),
        })
        .expect("header serialization cannot fail");
        writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
        for record in &self.records {
            let line = serde_json::to_string(record).expect("record serialization cannot fail");
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::parse(path, "manifest is empty"))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::parse(path, format!("bad header: {e}")))?;
        if header.schema != MANIFEST_SCHEMA {
            return Err(Error::parse(
                path,
                format!("unsupported manifest schema {:?}", header.schema),
            ));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: GenerationManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("record {}: {e}", lineno + 1)))?;
            records.push(record);
        }
        Ok(GenerationManifest { records })
    }

    /// Equality ignoring wall-clock durations.
    pub fn content_eq(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.content_eq(b))
    }
}
