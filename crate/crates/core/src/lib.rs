//! Replication audits for video generation models.
//!
//! The crate scores generated videos against training videos by descriptor
//! cosine similarity, computes the Fréchet video distance between the two
//! feature distributions, and traces how that distance moves as replicated
//! samples are filtered out. [`augment`] produces the perturbed conditioning
//! frames used to probe motion replication.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod cli;
pub mod config;
pub mod curve;
pub mod embedding_format;
pub mod error;
pub mod frechet;
pub mod output;
pub mod report;
pub mod similarity;

pub use embedding_format::{EmbeddingFile, EmbeddingSet, Manifest, SetRole};
pub use error::{Error, Result};
pub use frechet::{FvdResult, GaussianStats};
pub use similarity::{SimilarityMatrix, SimilarityReport};
