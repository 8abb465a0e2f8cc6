//! Copy-similarity scoring between real and generated descriptor sets.
//!
//! Every real/generated pair gets the cosine similarity of its descriptors.
//! The maximum over all pairs is the Top-VSSCD score; the mean over
//! generated videos of each video's best match is the average top score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_format::EmbeddingSet;

/// Default replication threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.6;
/// Default lower flag level: scores below it count as unique content.
pub const DEFAULT_UNIQUENESS_BAND: f64 = 0.5;
/// Tolerated floating-point overshoot outside [-1, 1] before clamping.
pub const COSINE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector{}", .0.as_ref().map(|id| format!(" for video {id:?}")).unwrap_or_default())]
    ZeroNorm(Option<String>),
    #[error("descriptor dimension mismatch: real {real}, generated {gen}")]
    DimMismatch { real: usize, gen: usize },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("similarity matrix is empty")]
    EmptyMatrix,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("uniqueness band {band} must lie in [0, threshold = {threshold}]")]
    InvalidBand { band: f64, threshold: f64 },
    #[error("cosine {0} is outside [-1, 1] beyond rounding slack")]
    OutOfRange(f64),
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum()
}

fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

fn clamp_cosine(c: f64) -> Result<f64, SimilarityError> {
    if !c.is_finite() || c.abs() > 1.0 + COSINE_SLACK {
        return Err(SimilarityError::OutOfRange(c));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Cosine similarity of two descriptors, clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroNorm(None));
    }
    clamp_cosine(dot(u, v) / (nu * nv))
}

/// All pairwise similarities, rows indexed by real video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub real_ids: Vec<String>,
    pub gen_ids: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a matrix from row-major values, validating the shape and range.
    pub fn from_values(
        real_ids: Vec<String>,
        gen_ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, SimilarityError> {
        if values.len() != real_ids.len() * gen_ids.len() {
            return Err(SimilarityError::LengthMismatch(
                values.len(),
                real_ids.len() * gen_ids.len(),
            ));
        }
        let values = values
            .into_iter()
            .map(clamp_cosine)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            real_ids,
            gen_ids,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.real_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.gen_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, real: usize, gen: usize) -> f64 {
        self.values[real * self.cols() + gen]
    }

    pub fn row(&self, real: usize) -> &[f64] {
        let m = self.cols();
        &self.values[real * m..(real + 1) * m]
    }

    /// Best real match for one generated video; ties go to the lowest real index.
    pub fn best_real_for(&self, gen: usize) -> (usize, f64) {
        let mut best = (0, self.get(0, gen));
        for i in 1..self.rows() {
            let s = self.get(i, gen);
            if s > best.1 {
                best = (i, s);
            }
        }
        best
    }

    /// Best generated match for one real video; ties go to the lowest index.
    pub fn best_gen_for(&self, real: usize) -> (usize, f64) {
        let row = self.row(real);
        let mut best = (0, row[0]);
        for (j, &s) in row.iter().enumerate().skip(1) {
            if s > best.1 {
                best = (j, s);
            }
        }
        best
    }
}

fn check_sets(real: &EmbeddingSet, gen: &EmbeddingSet) -> Result<(), SimilarityError> {
    if real.dim() != gen.dim() {
        return Err(SimilarityError::DimMismatch {
            real: real.dim(),
            gen: gen.dim(),
        });
    }
    if real.is_empty() {
        return Err(SimilarityError::EmptySet("real"));
    }
    if gen.is_empty() {
        return Err(SimilarityError::EmptySet("generated"));
    }
    Ok(())
}

fn norms(set: &EmbeddingSet) -> Result<Vec<f64>, SimilarityError> {
    set.rows()
        .zip(set.ids())
        .map(|(row, id)| {
            let n = norm(row);
            if n == 0.0 {
                Err(SimilarityError::ZeroNorm(Some(id.clone())))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Pairwise cosine similarities; rows are computed in parallel.
pub fn similarity_matrix(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
) -> Result<SimilarityMatrix, SimilarityError> {
    check_sets(real, gen)?;
    let real_norms = norms(real)?;
    let gen_norms = norms(gen)?;
    let rows: Vec<Vec<f64>> = (0..real.count())
        .into_par_iter()
        .map(|i| {
            let r = real.vector(i);
            (0..gen.count())
                .map(|j| clamp_cosine(dot(r, gen.vector(j)) / (real_norms[i] * gen_norms[j])))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(SimilarityMatrix {
        real_ids: real.ids().to_vec(),
        gen_ids: gen.ids().to_vec(),
        values: rows.concat(),
    })
}

/// Largest entry of the matrix.
pub fn top_vsscd(mat: &SimilarityMatrix) -> Result<f64, SimilarityError> {
    mat.values
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(SimilarityError::EmptyMatrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMatch {
    pub gen_id: String,
    pub best_real_id: String,
    pub top_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatch {
    pub real_id: String,
    pub best_gen_id: String,
    pub top_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub threshold: f64,
    pub uniqueness_band: f64,
    /// Also report each real video's best generated match.
    pub per_real: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            uniqueness_band: DEFAULT_UNIQUENESS_BAND,
            per_real: false,
        }
    }
}

impl ScoreOptions {
    /// Options for a given threshold; the band is capped at the threshold.
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            uniqueness_band: DEFAULT_UNIQUENESS_BAND.min(threshold),
            per_real: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SimilarityError::InvalidThreshold(self.threshold));
        }
        if !(0.0..=self.threshold).contains(&self.uniqueness_band) {
            return Err(SimilarityError::InvalidBand {
                band: self.uniqueness_band,
                threshold: self.threshold,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_gen: Vec<GenMatch>,
    pub top_vsscd: f64,
    pub average_top: f64,
    pub replicated_ids: Vec<String>,
    pub threshold: f64,
    pub uniqueness_band: f64,
    /// Generated videos whose top score reaches the uniqueness band.
    pub above_band_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_real: Option<Vec<RealMatch>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_top_per_real: Option<f64>,
}

impl SimilarityReport {
    pub fn gen_count(&self) -> usize {
        self.per_gen.len()
    }

    pub fn fraction_replicated(&self) -> f64 {
        if self.per_gen.is_empty() {
            0.0
        } else {
            self.replicated_ids.len() as f64 / self.per_gen.len() as f64
        }
    }

    pub fn top_score_of(&self, gen_id: &str) -> Option<f64> {
        self.per_gen
            .iter()
            .find(|m| m.gen_id == gen_id)
            .map(|m| m.top_score)
    }

    /// CSV with columns `gen_id,best_real_id,top_score,replicated`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["gen_id", "best_real_id", "top_score", "replicated"])
            .expect("in-memory write");
        for m in &self.per_gen {
            let replicated = m.top_score >= self.threshold;
            w.write_record([
                m.gen_id.as_str(),
                m.best_real_id.as_str(),
                &m.top_score.to_string(),
                if replicated { "true" } else { "false" },
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Builds the report for a matrix that already holds the scores.
pub fn report_from_matrix(
    mat: &SimilarityMatrix,
    opts: &ScoreOptions,
) -> Result<SimilarityReport, SimilarityError> {
    opts.validate()?;
    if mat.is_empty() {
        return Err(SimilarityError::EmptyMatrix);
    }
    let per_gen: Vec<GenMatch> = (0..mat.cols())
        .map(|j| {
            let (i, s) = mat.best_real_for(j);
            GenMatch {
                gen_id: mat.gen_ids[j].clone(),
                best_real_id: mat.real_ids[i].clone(),
                top_score: s,
            }
        })
        .collect();
    let top = per_gen
        .iter()
        .map(|m| m.top_score)
        .fold(f64::NEG_INFINITY, f64::max);
    let average_top = per_gen.iter().map(|m| m.top_score).sum::<f64>() / per_gen.len() as f64;
    let flagged = |level: f64| {
        per_gen
            .iter()
            .filter(|m| m.top_score >= level)
            .map(|m| m.gen_id.clone())
            .collect::<Vec<_>>()
    };
    let (per_real, average_top_per_real) = if opts.per_real {
        let matches: Vec<RealMatch> = (0..mat.rows())
            .map(|i| {
                let (j, s) = mat.best_gen_for(i);
                RealMatch {
                    real_id: mat.real_ids[i].clone(),
                    best_gen_id: mat.gen_ids[j].clone(),
                    top_score: s,
                }
            })
            .collect();
        let avg = matches.iter().map(|m| m.top_score).sum::<f64>() / matches.len() as f64;
        (Some(matches), Some(avg))
    } else {
        (None, None)
    };
    Ok(SimilarityReport {
        replicated_ids: flagged(opts.threshold),
        above_band_ids: flagged(opts.uniqueness_band),
        per_gen,
        top_vsscd: top,
        average_top,
        threshold: opts.threshold,
        uniqueness_band: opts.uniqueness_band,
        per_real,
        average_top_per_real,
    })
}

/// Scores a generated set against a real set at the given threshold.
pub fn score(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    threshold: f64,
) -> Result<SimilarityReport, SimilarityError> {
    score_with(real, gen, &ScoreOptions::with_threshold(threshold))
}

pub fn score_with(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    opts: &ScoreOptions,
) -> Result<SimilarityReport, SimilarityError> {
    opts.validate()?;
    let mat = similarity_matrix(real, gen)?;
    report_from_matrix(&mat, opts)
}
