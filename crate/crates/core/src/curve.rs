//! FVD recomputed as replicated generated videos are excluded.
//!
//! Generated videos are ranked by their top similarity score (most
//! replicated first). Each curve point drops a prefix of that ranking and
//! recomputes FVD on the rest, so retained subsets are nested.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_format::EmbeddingSet;
use crate::frechet::{self, FrechetError, FrechetOptions, GaussianStats};
use crate::similarity::SimilarityReport;

/// Number of even steps the flagged curve takes to remove every flagged video.
pub const FLAGGED_STEPS: usize = 10;

/// Retained fractions 1.00, 0.95, ..., 0.50.
pub fn default_steps() -> Vec<f64> {
    (0..=10).map(|i| (100 - 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("similarity report has no generated videos")]
    EmptyReport,
    #[error("invalid curve step {step}: {reason}")]
    InvalidStep { step: f64, reason: &'static str },
    #[error("step {step} removes {removed} of {total} generated videos, leaving fewer than 2")]
    TooFewRemaining {
        step: f64,
        removed: usize,
        total: usize,
    },
    #[error("generated set does not match the report: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Frechet(#[from] FrechetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    /// Sweep over caller-chosen retained fractions along the full ranking.
    Ranked,
    /// Remove only videos at or above the report threshold.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// (m − removed) / m.
    pub retained_fraction: f64,
    pub removed_count: usize,
    pub fvd: f64,
    pub threshold: f64,
    /// Lowest top score among retained videos.
    pub min_remaining_top_score: f64,
    /// Highest top score among retained videos.
    pub max_remaining_top_score: f64,
    /// The step that produced this point (ranked mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub mode: CurveMode,
    pub points: Vec<CurvePoint>,
    pub baseline_fvd: f64,
    pub gen_set_size: usize,
    /// Videos at or above the threshold (flagged mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged_count: Option<usize>,
    /// Set when full removal was cut short to keep two videos for the covariance.
    #[serde(default)]
    pub removal_capped: bool,
    /// max |fvd_k − baseline| / baseline; absent when the baseline is zero.
    pub flatness: Option<f64>,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "retained_fraction",
            "removed_count",
            "fvd",
            "threshold",
            "min_remaining_top_score",
        ])
        .expect("in-memory write");
        for p in &self.points {
            w.write_record([
                p.retained_fraction.to_string(),
                p.removed_count.to_string(),
                p.fvd.to_string(),
                p.threshold.to_string(),
                p.min_remaining_top_score.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Two columns for external plotting: percentage of samples retained, FVD.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("percent_retained,fvd\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.retained_fraction * 100.0, p.fvd));
        }
        out
    }

    pub fn last(&self) -> &CurvePoint {
        self.points
            .last()
            .expect("curves always hold the baseline point")
    }
}

/// Generated ids, most replicated first; equal scores in lexicographic id order.
pub fn rank_by_replication(report: &SimilarityReport) -> Result<Vec<String>, CurveError> {
    if report.per_gen.is_empty() {
        return Err(CurveError::EmptyReport);
    }
    let mut entries: Vec<(&str, f64)> = report
        .per_gen
        .iter()
        .map(|m| (m.gen_id.as_str(), m.top_score))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(entries.into_iter().map(|(id, _)| id.to_owned()).collect())
}

/// Shared inputs for every point of one curve.
struct Sweep<'a> {
    real_stats: GaussianStats,
    gen: &'a EmbeddingSet,
    /// Gen-set row of each ranked video, most replicated first.
    ranked_rows: Vec<usize>,
    ranked_scores: Vec<f64>,
    threshold: f64,
    opts: FrechetOptions,
}

impl<'a> Sweep<'a> {
    fn new(
        real: &EmbeddingSet,
        gen: &'a EmbeddingSet,
        report: &SimilarityReport,
        opts: &FrechetOptions,
    ) -> Result<Self, CurveError> {
        let ranking = rank_by_replication(report)?;
        if gen.count() != ranking.len() {
            return Err(CurveError::IdMismatch(format!(
                "report covers {} videos, generated set holds {}",
                ranking.len(),
                gen.count()
            )));
        }
        if real.dim() != gen.dim() {
            return Err(FrechetError::DimMismatch(real.dim(), gen.dim()).into());
        }
        let rows: HashMap<&str, usize> = gen
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let scores: HashMap<&str, f64> = report
            .per_gen
            .iter()
            .map(|m| (m.gen_id.as_str(), m.top_score))
            .collect();
        let mut ranked_rows = Vec::with_capacity(ranking.len());
        let mut ranked_scores = Vec::with_capacity(ranking.len());
        for id in &ranking {
            let row = rows.get(id.as_str()).ok_or_else(|| {
                CurveError::IdMismatch(format!("{id:?} missing from the generated set"))
            })?;
            ranked_rows.push(*row);
            ranked_scores.push(scores[id.as_str()]);
        }
        Ok(Self {
            real_stats: frechet::gaussian_stats(real)?,
            gen,
            ranked_rows,
            ranked_scores,
            threshold: report.threshold,
            opts: *opts,
        })
    }

    fn size(&self) -> usize {
        self.ranked_rows.len()
    }

    fn point(
        &self,
        removed: usize,
        requested_fraction: Option<f64>,
    ) -> Result<CurvePoint, CurveError> {
        let mut kept = self.ranked_rows[removed..].to_vec();
        kept.sort_unstable();
        let subset = self.gen.select(&kept);
        let stats = frechet::gaussian_stats(&subset)?;
        let fvd = frechet::frechet_distance_with(&self.real_stats, &stats, &self.opts)?;
        let remaining = &self.ranked_scores[removed..];
        let m = self.size();
        Ok(CurvePoint {
            retained_fraction: (m - removed) as f64 / m as f64,
            removed_count: removed,
            fvd: fvd.value,
            threshold: self.threshold,
            min_remaining_top_score: remaining.iter().copied().fold(f64::INFINITY, f64::min),
            max_remaining_top_score: remaining.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            requested_fraction,
        })
    }

    fn run(
        &self,
        mode: CurveMode,
        removals: &[(usize, Option<f64>)],
        flagged_count: Option<usize>,
        removal_capped: bool,
    ) -> Result<Curve, CurveError> {
        let points = removals
            .par_iter()
            .map(|&(k, step)| self.point(k, step))
            .collect::<Result<Vec<_>, _>>()?;
        let baseline_fvd = points[0].fvd;
        let flatness = (baseline_fvd > 0.0).then(|| {
            points
                .iter()
                .map(|p| (p.fvd - baseline_fvd).abs() / baseline_fvd)
                .fold(0.0, f64::max)
        });
        Ok(Curve {
            mode,
            points,
            baseline_fvd,
            gen_set_size: self.size(),
            flagged_count,
            removal_capped,
            flatness,
        })
    }
}

/// Number of videos removed for a retained fraction: ceil((1 − step) · m).
/// Steps from `steps` that leave at least two of `m` videos.
pub fn feasible_steps(steps: &[f64], m: usize) -> Vec<f64> {
    steps
        .iter()
        .copied()
        .filter(|&s| m - removal_for_step(s, m) >= 2)
        .collect()
}

pub fn removal_for_step(step: f64, m: usize) -> usize {
    // Slack absorbs representation error such as (1 - 0.9) * 10 = 0.9999999999999998.
    let raw = (1.0 - step) * m as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(m)
}

fn check_steps(steps: &[f64]) -> Result<(), CurveError> {
    let first = *steps.first().ok_or(CurveError::InvalidStep {
        step: f64::NAN,
        reason: "no steps given",
    })?;
    if first != 1.0 {
        return Err(CurveError::InvalidStep {
            step: first,
            reason: "the first step must be 1.0",
        });
    }
    for w in steps.windows(2) {
        if !(w[1] < w[0]) {
            return Err(CurveError::InvalidStep {
                step: w[1],
                reason: "steps must be strictly decreasing",
            });
        }
    }
    for &s in steps {
        if !(s > 0.0 && s <= 1.0) {
            return Err(CurveError::InvalidStep {
                step: s,
                reason: "steps must lie in (0, 1]",
            });
        }
    }
    Ok(())
}

/// Curve over the given retained fractions, which must start at 1.0 and
/// strictly decrease.
pub fn integrated_curve(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    report: &SimilarityReport,
    steps: &[f64],
) -> Result<Curve, CurveError> {
    integrated_curve_with(real, gen, report, steps, &FrechetOptions::default())
}

pub fn integrated_curve_with(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    report: &SimilarityReport,
    steps: &[f64],
    opts: &FrechetOptions,
) -> Result<Curve, CurveError> {
    check_steps(steps)?;
    let sweep = Sweep::new(real, gen, report, opts)?;
    let m = sweep.size();
    let removals = steps
        .iter()
        .map(|&s| {
            let removed = removal_for_step(s, m);
            if m - removed < 2 {
                Err(CurveError::TooFewRemaining {
                    step: s,
                    removed,
                    total: m,
                })
            } else {
                Ok((removed, Some(s)))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    sweep.run(CurveMode::Ranked, &removals, None, false)
}

/// Removal counts for the flagged curve: round(i·k/10) for i = 0..=10, capped
/// at m − 2, consecutive duplicates dropped.
pub fn flagged_removals(flagged: usize, m: usize) -> (Vec<usize>, bool) {
    if flagged == 0 {
        return (vec![0], false);
    }
    let cap = m.saturating_sub(2);
    let mut capped = false;
    let mut out: Vec<usize> = Vec::with_capacity(FLAGGED_STEPS + 1);
    for i in 0..=FLAGGED_STEPS {
        let target = (i as f64 * flagged as f64 / FLAGGED_STEPS as f64).round() as usize;
        if target > cap {
            capped = true;
        }
        let k = target.min(cap);
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    (out, capped)
}

/// Curve that removes only videos flagged at the report threshold, in ten
/// even steps. No flagged videos gives a single baseline point.
pub fn flagged_curve(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    report: &SimilarityReport,
) -> Result<Curve, CurveError> {
    flagged_curve_with(real, gen, report, &FrechetOptions::default())
}

pub fn flagged_curve_with(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    report: &SimilarityReport,
    opts: &FrechetOptions,
) -> Result<Curve, CurveError> {
    let sweep = Sweep::new(real, gen, report, opts)?;
    let flagged = sweep
        .ranked_scores
        .iter()
        .take_while(|&&s| s >= report.threshold)
        .count();
    let (removals, capped) = flagged_removals(flagged, sweep.size());
    let removals: Vec<(usize, Option<f64>)> = removals.into_iter().map(|k| (k, None)).collect();
    sweep.run(CurveMode::Flagged, &removals, Some(flagged), capped)
}
