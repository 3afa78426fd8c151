//! Training-free synthetic-data generation with dual image-prompt guidance,
//! plus a weighted real/synthetic few-shot classifier harness.
//!
//! The pipeline has four stages:
//!
//! 1. **similarity** — build a class-level similarity matrix from few-shot
//!    embeddings; softmax rows give negative-class sampling distributions.
//! 2. **generation** — for each target class, guide a diffusion sampler with
//!    a text prompt, a positive exemplar from the class, and a *subtracted*
//!    negative exemplar from a similar class (extended classifier-free
//!    guidance), recording provenance per output.
//! 3. **training** — fine-tune a classifier on half-real/half-synthetic
//!    batches under a lambda-weighted cross-entropy.
//! 4. **verify** — an analytic Gaussian backend makes every guidance formula
//!    exactly checkable at desk scale; the oracle suite is the artifact's
//!    trust anchor.

pub mod backend;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod generation;
pub mod guidance;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod similarity;
pub mod verify;

pub use error::{Error, Result};
