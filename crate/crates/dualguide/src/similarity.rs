//! Class-level similarity from few-shot embeddings and softmax sampling of
//! negative (contrast) classes.
//!
//! Pairwise cosine similarities between individual embeddings are averaged
//! into class-level scores; for each anchor class a softmax over the other
//! classes' scores gives the negative-sampling distribution. The anchor is
//! excluded *before* the softmax so its self-similarity never distorts the
//! distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Few-shot embeddings with class labels.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vectors: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("embedding table is empty"));
        }
        if vectors.len() != labels.len() {
            return Err(Error::invalid(format!(
                "embedding table has {} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::invalid("embedding table has no class names"));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::invalid("embedding vectors must be non-empty"));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "embedding {i} has dimension {} but expected {dim}",
                    v.len()
                )));
            }
        }
        let n_classes = class_names.len();
        let mut seen = vec![false; n_classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(Error::invalid(format!(
                    "embedding {i} has class index {label} >= {n_classes}"
                )));
            }
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "class {:?} has no embeddings",
                class_names[missing]
            )));
        }
        Ok(EmbeddingTable {
            vectors,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn members(&self, class: usize) -> impl Iterator<Item = &Vec<f64>> {
        self.vectors
            .iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == class)
            .map(|(v, _)| v)
    }
}

/// Averaged pairwise cosine similarities between classes, plus the softmax
/// temperature used for negative sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSimilarityMatrix {
    pub schema: String,
    pub class_names: Vec<String>,
    pub temperature: f64,
    pub sim: Vec<Vec<f64>>,
}

pub const SIMILARITY_SCHEMA: &str = "class-similarity/v1";

impl ClassSimilarityMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SIMILARITY_SCHEMA {
            return Err(Error::invalid(format!(
                "unknown similarity schema {:?}",
                self.schema
            )));
        }
        let n = self.class_names.len();
        if n == 0 || self.sim.len() != n {
            return Err(Error::invalid("similarity matrix shape mismatch"));
        }
        for row in &self.sim {
            if row.len() != n {
                return Err(Error::invalid("similarity matrix is not square"));
            }
            for &v in row {
                if !(v.is_finite() && (-1.0 - 1e-9..=1.0 + 1e-9).contains(&v)) {
                    return Err(Error::invalid(format!(
                        "similarity value {v} outside [-1, 1]"
                    )));
                }
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Top pairs (i < j) by similarity, for reporting.
    pub fn top_pairs(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let n = self.n_classes();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j, self.sim[i][j]));
            }
        }
        pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        pairs.truncate(k);
        pairs
    }
}

/// Negative-sampling probabilities for one anchor class. The anchor's own
/// probability is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSamplingDistribution {
    probs: Vec<f64>,
    anchor: usize,
}

impl NegativeSamplingDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity undefined for a zero vector"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Average cosine similarity over all embedding pairs of every class pair,
/// including the diagonal.
#[allow(clippy::needless_range_loop)]
pub fn class_similarity_matrix(table: &EmbeddingTable, temperature: f64) -> Result<ClassSimilarityMatrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = table.n_classes();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut total = 0.0;
            let mut count = 0usize;
            for a in table.members(i) {
                for b in table.members(j) {
                    total += cosine(a, b)?;
                    count += 1;
                }
            }
            // every class has >= 1 embedding, so count > 0
            let value = total / count as f64;
            sim[i][j] = value;
            sim[j][i] = value;
        }
    }
    let matrix = ClassSimilarityMatrix {
        schema: SIMILARITY_SCHEMA.to_string(),
        class_names: table.class_names().to_vec(),
        temperature,
        sim,
    };
    matrix.validate()?;
    Ok(matrix)
}

/// Softmax over the anchor's similarities to the *other* classes, at the
/// matrix temperature. `probs[anchor]` is exactly 0.
pub fn negative_distribution(
    matrix: &ClassSimilarityMatrix,
    anchor: usize,
) -> Result<NegativeSamplingDistribution> {
    let n = matrix.n_classes();
    if anchor >= n {
        return Err(Error::invalid(format!(
            "anchor index {anchor} out of bounds for {n} classes"
        )));
    }
    if n < 2 {
        return Err(Error::NoNegativeClass);
    }
    let row = &matrix.sim[anchor];
    let scaled: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != anchor)
        .map(|j| (j, row[j] / matrix.temperature))
        .collect();
    let max = scaled
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; n];
    let mut total = 0.0;
    for &(j, v) in &scaled {
        let e = (v - max).exp();
        probs[j] = e;
        total += e;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs[anchor] = 0.0;
    Ok(NegativeSamplingDistribution { probs, anchor })
}

/// Draw a negative class; never returns the anchor.
pub fn sample_negative_class(dist: &NegativeSamplingDistribution, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_candidate = None;
    for (j, &p) in dist.probs.iter().enumerate() {
        if j == dist.anchor || p == 0.0 {
            continue;
        }
        acc += p;
        last_candidate = Some(j);
        if u < acc {
            return j;
        }
    }
    // float rounding can leave acc slightly below 1; fall back to the last
    // nonzero candidate
    last_candidate.expect("distribution has at least one nonzero candidate")
}
