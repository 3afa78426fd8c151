//! Few-shot dataset layout and guide-artifact loading.
//!
//! Layout: `root/<class_name>/<files>`, with an optional `shots.txt` at the
//! root pinning the few-shot subset. Each line is `<class_name>/<filename>`;
//! per class, the first `n_shots` pinned entries are used, so smaller-shot
//! configurations are prefix-subsets of larger ones drawn from one pool.
//!
//! Guide artifacts are either raster images (by extension) or feature
//! vectors stored as a JSON array of numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const SHOTS_LIST_FILE: &str = "shots.txt";

const RASTER_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif", "webp", "tiff"];
const VECTOR_EXTENSIONS: &[&str] = &["json", "vec"];

/// A pinned few-shot dataset: ordered classes, exactly `n_shots` image
/// references per class.
#[derive(Debug, Clone)]
pub struct FewShotDataset {
    root: PathBuf,
    classes: Vec<String>,
    shots: Vec<Vec<PathBuf>>,
    n_shots: usize,
}

impl FewShotDataset {
    /// Load the dataset, taking the first `n_shots` entries per class from
    /// `shots.txt` when present, else from the sorted directory listing.
    pub fn load(root: &Path, n_shots: usize) -> Result<Self> {
        if n_shots == 0 {
            return Err(Error::invalid("n_shots must be >= 1"));
        }
        if !root.is_dir() {
            return Err(Error::Config(format!(
                "dataset root {} does not exist or is not a directory",
                root.display()
            )));
        }
        let pinned = read_shots_list(root)?;
        let mut classes: Vec<String> = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().is_dir() {
                classes.push(entry.file_name().to_string_lossy().to_string());
            }
        }
        if classes.is_empty() {
            return Err(Error::Config(format!(
                "dataset root {} has no class directories",
                root.display()
            )));
        }
        classes.sort();

        let mut shots = Vec::with_capacity(classes.len());
        for class in &classes {
            let pool: Vec<PathBuf> = match pinned.as_ref().and_then(|p| p.get(class)) {
                Some(list) => list.clone(),
                None => {
                    let dir = root.join(class);
                    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                        .map_err(|e| Error::io(&dir, e))?
                        .filter_map(|e| e.ok())
                        .filter(|e| e.path().is_file())
                        .map(|e| PathBuf::from(class).join(e.file_name()))
                        .collect();
                    files.sort();
                    files
                }
            };
            if pool.len() < n_shots {
                return Err(Error::Config(format!(
                    "class {class:?} has {} shots, need {n_shots}",
                    pool.len()
                )));
            }
            let selected: Vec<PathBuf> = pool.into_iter().take(n_shots).collect();
            for rel in &selected {
                let path = root.join(rel);
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "shot {} referenced but missing",
                        path.display()
                    )));
                }
            }
            shots.push(selected);
        }
        Ok(FewShotDataset {
            root: root.to_path_buf(),
            classes,
            shots,
            n_shots,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Relative shot paths for a class.
    pub fn shots(&self, class: usize) -> &[PathBuf] {
        &self.shots[class]
    }

    /// Absolute path of one shot.
    pub fn shot_path(&self, class: usize, shot: usize) -> PathBuf {
        self.root.join(&self.shots[class][shot])
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }
}

fn read_shots_list(root: &Path) -> Result<Option<BTreeMap<String, Vec<PathBuf>>>> {
    let path = root.join(SHOTS_LIST_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut pinned: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (class, file) = line.split_once('/').ok_or_else(|| {
            Error::parse(
                &path,
                format!("line {}: expected <class>/<file>, got {line:?}", lineno + 1),
            )
        })?;
        pinned
            .entry(class.to_string())
            .or_default()
            .push(PathBuf::from(class).join(file));
    }
    Ok(Some(pinned))
}

/// Write a shots list pinning the given per-class relative file names.
pub fn write_shots_list(root: &Path, entries: &[(String, Vec<String>)]) -> Result<()> {
    let mut text = String::new();
    for (class, files) in entries {
        for file in files {
            text.push_str(class);
            text.push('/');
            text.push_str(file);
            text.push('\n');
        }
    }
    let path = root.join(SHOTS_LIST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// A guide artifact: either a raster image or a feature vector.
pub enum GuideSource {
    Raster(image::DynamicImage),
    Vector(Vec<f64>),
}

impl GuideSource {
    pub fn is_raster(&self) -> bool {
        matches!(self, GuideSource::Raster(_))
    }
}

/// Load a guide artifact by extension.
pub fn load_guide(path: &Path) -> Result<GuideSource> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    if VECTOR_EXTENSIONS.contains(&ext.as_str()) {
        Ok(GuideSource::Vector(read_vector(path)?))
    } else if RASTER_EXTENSIONS.contains(&ext.as_str()) {
        let img = image::open(path).map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(GuideSource::Raster(img))
    } else {
        Err(Error::invalid(format!(
            "unsupported guide extension {ext:?} for {}",
            path.display()
        )))
    }
}

/// Read a feature vector stored as a JSON array of numbers.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data: Vec<f64> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if data.is_empty() {
        return Err(Error::parse(path, "vector file is empty"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(path, "vector file contains non-finite values"));
    }
    Ok(data)
}

/// Write a feature vector as a JSON array of numbers.
pub fn write_vector(path: &Path, data: &[f64]) -> Result<()> {
    let text = serde_json::to_string(data).expect("serializing a float slice cannot fail");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
