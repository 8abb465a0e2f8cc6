//! Fréchet distance between Gaussian fits of two descriptor sets (FVD when
//! the descriptors are video-network features).
//!
//! d² = ‖μ_p − μ_q‖² + Tr(Σ_p + Σ_q − 2 (Σ_p^{1/2} Σ_q Σ_p^{1/2})^{1/2})
//!
//! The symmetric inner product keeps every square root on a symmetric PSD
//! matrix, so a symmetric eigendecomposition suffices. Negative eigenvalues
//! from rank deficiency or rounding are clamped to zero and counted.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_format::EmbeddingSet;

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Samples per partial-statistics chunk. Fixed so that reductions are
/// reproducible bit for bit.
const STATS_CHUNK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum FrechetError {
    #[error("at least 2 samples are needed for a covariance, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("matrix is not square ({0} x {1})")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("diagonal epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
}

/// Mean and unbiased covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
}

fn max_asymmetry(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let mut asym = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(a[(i, j)].abs());
            if j > i {
                asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
    }
    (asym, scale)
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<(), FrechetError> {
    if a.nrows() != a.ncols() {
        return Err(FrechetError::NotSquare(a.nrows(), a.ncols()));
    }
    let (asymmetry, scale) = max_asymmetry(a);
    let tolerance = SYMMETRY_TOLERANCE * scale.max(1.0);
    if asymmetry.is_nan() || asymmetry > tolerance {
        return Err(FrechetError::NotSymmetric {
            asymmetry,
            tolerance,
        });
    }
    Ok(())
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self, FrechetError> {
        if count < 2 {
            return Err(FrechetError::TooFewSamples(count));
        }
        if cov.nrows() != mean.len() {
            return Err(FrechetError::DimMismatch(mean.len(), cov.nrows()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(FrechetError::NonFinite("statistics construction"));
        }
        check_symmetric(&cov)?;
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
            count,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Count, mean and centered scatter of a block of samples.
struct Partial {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl Partial {
    fn from_rows(rows: &[f32], dim: usize) -> Self {
        let n = rows.len() / dim;
        let x = DMatrix::from_row_iterator(n, dim, rows.iter().map(|&v| f64::from(v)));
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let scatter = centered.transpose() * &centered;
        Self { n, mean, scatter }
    }

    fn merge(self, other: Partial) -> Partial {
        let n = self.n + other.n;
        let delta = &other.mean - &self.mean;
        let w = (self.n as f64) * (other.n as f64) / n as f64;
        let mean = &self.mean + &delta * (other.n as f64 / n as f64);
        let scatter = self.scatter + other.scatter + (&delta * delta.transpose()) * w;
        Partial { n, mean, scatter }
    }
}

fn reduce_pairwise(mut parts: Vec<Partial>) -> Partial {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one partial")
}

/// Mean and unbiased (n − 1) covariance of a set. Samples are processed in
/// fixed-size chunks merged in a fixed pairwise order.
pub fn gaussian_stats(set: &EmbeddingSet) -> Result<GaussianStats, FrechetError> {
    let n = set.count();
    if n < 2 {
        return Err(FrechetError::TooFewSamples(n));
    }
    let dim = set.dim();
    let parts: Vec<Partial> = set
        .as_flat()
        .par_chunks(STATS_CHUNK * dim)
        .map(|rows| Partial::from_rows(rows, dim))
        .collect();
    let total = reduce_pairwise(parts);
    let cov = total.scatter / (n as f64 - 1.0);
    GaussianStats::new(total.mean, symmetrize(&cov), n)
}

fn psd_eigen(
    a: &DMatrix<f64>,
    stage: &'static str,
) -> Result<(SymmetricEigen<f64, nalgebra::Dyn>, usize), FrechetError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FrechetError::NonFinite(stage));
    }
    let mut eig = SymmetricEigen::new(symmetrize(a));
    let mut clamped = 0;
    for v in eig.eigenvalues.iter_mut() {
        if !v.is_finite() {
            return Err(FrechetError::NonFinite(stage));
        }
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    Ok((eig, clamped))
}

/// Square root of a symmetric PSD matrix. Negative eigenvalues are replaced
/// by zero; the second value is how many were.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), FrechetError> {
    check_symmetric(a)?;
    let (eig, clamped) = psd_eigen(a, "matrix square root")?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((symmetrize(&s), clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrechetOptions {
    /// Added to both covariance diagonals before the square roots. Zero
    /// unless an input is pathological; any other value changes scores.
    pub diagonal_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvdResult {
    pub value: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    pub eigen_clamped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<FvdResult, FrechetError> {
    frechet_distance_with(p, q, &FrechetOptions::default())
}

pub fn frechet_distance_with(
    p: &GaussianStats,
    q: &GaussianStats,
    opts: &FrechetOptions,
) -> Result<FvdResult, FrechetError> {
    if p.dim() != q.dim() {
        return Err(FrechetError::DimMismatch(p.dim(), q.dim()));
    }
    let eps = opts.diagonal_epsilon;
    if !eps.is_finite() || eps < 0.0 {
        return Err(FrechetError::InvalidEpsilon(eps));
    }
    let dim = p.dim();
    let jitter = DMatrix::<f64>::identity(dim, dim) * eps;
    let cov_p = &p.cov + &jitter;
    let cov_q = &q.cov + &jitter;

    let diff = &p.mean - &q.mean;
    let mean_term = diff.dot(&diff);
    if !mean_term.is_finite() {
        return Err(FrechetError::NonFinite("mean difference"));
    }

    let (sqrt_p, clamped_p) = matrix_sqrt_psd(&cov_p)?;
    let inner = &sqrt_p * &cov_q * &sqrt_p;
    let (eig, clamped_inner) = psd_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let raw_trace = cov_p.trace() + cov_q.trace() - 2.0 * tr_sqrt;
    if !raw_trace.is_finite() {
        return Err(FrechetError::NonFinite("trace term"));
    }
    let trace_term = raw_trace.max(0.0);
    Ok(FvdResult {
        value: mean_term + trace_term,
        mean_term,
        trace_term,
        eigen_clamped: clamped_p + clamped_inner,
        warnings: Vec::new(),
    })
}

/// Warning text for a set whose sample covariance cannot be full rank.
pub fn rank_warning(label: &str, count: usize, dim: usize) -> Option<String> {
    (count <= dim).then(|| {
        format!(
            "{label} set has {count} samples for {dim} dimensions: covariance is rank-deficient"
        )
    })
}

pub fn fvd(real: &EmbeddingSet, gen: &EmbeddingSet) -> Result<FvdResult, FrechetError> {
    fvd_with(real, gen, &FrechetOptions::default())
}

pub fn fvd_with(
    real: &EmbeddingSet,
    gen: &EmbeddingSet,
    opts: &FrechetOptions,
) -> Result<FvdResult, FrechetError> {
    if real.dim() != gen.dim() {
        return Err(FrechetError::DimMismatch(real.dim(), gen.dim()));
    }
    let p = gaussian_stats(real)?;
    let q = gaussian_stats(gen)?;
    let mut result = frechet_distance_with(&p, &q, opts)?;
    result
        .warnings
        .extend(rank_warning("real", real.count(), real.dim()));
    result
        .warnings
        .extend(rank_warning("generated", gen.count(), gen.dim()));
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_format::SetRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[Vec<f32>]) -> EmbeddingSet {
        let ids = (0..rows.len()).map(|i| format!("v{i}")).collect();
        EmbeddingSet::from_rows("s", SetRole::Real, rows, ids).unwrap()
    }

    fn stats_1d(mean: f64, var: f64) -> GaussianStats {
        GaussianStats::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
            10,
        )
        .unwrap()
    }

    #[test]
    fn two_point_stats() {
        let s = gaussian_stats(&set(&[vec![0.0, 0.0], vec![2.0, 2.0]])).unwrap();
        assert_eq!(s.mean().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.cov().as_slice(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn identical_vectors_have_zero_covariance() {
        let s = gaussian_stats(&set(&vec![vec![1.5, -2.0, 3.0]; 5])).unwrap();
        assert!(s.cov().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            gaussian_stats(&set(&[vec![1.0]])).unwrap_err(),
            FrechetError::TooFewSamples(1)
        );
    }

    #[test]
    fn chunked_stats_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 3;
        let rows: Vec<Vec<f32>> = (0..700)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.gen_range(-5.0f32..5.0) + 100.0)
                    .collect()
            })
            .collect();
        let s = gaussian_stats(&set(&rows)).unwrap();
        let n = rows.len() as f64;
        let mut mean = [0.0f64; 3];
        for r in &rows {
            for k in 0..dim {
                mean[k] += f64::from(r[k]) / n;
            }
        }
        for a in 0..dim {
            assert!((s.mean()[a] - mean[a]).abs() < 1e-9);
            for b in 0..dim {
                let c: f64 = rows
                    .iter()
                    .map(|r| (f64::from(r[a]) - mean[a]) * (f64::from(r[b]) - mean[b]))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!((s.cov()[(a, b)] - c).abs() < 1e-8, "{a},{b}");
            }
        }
    }

    #[test]
    fn sqrt_examples() {
        let (s, c) = matrix_sqrt_psd(&DMatrix::identity(3, 3)).unwrap();
        assert!((s - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        assert_eq!(c, 0);
        let (s, c) =
            matrix_sqrt_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-12 && (s[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(s[(0, 1)].abs() < 1e-12);
        assert_eq!(c, 0);
    }

    #[test]
    fn sqrt_clamps_negative_eigenvalues() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, -1.0]));
        let (s, c) = matrix_sqrt_psd(&a).unwrap();
        assert_eq!(c, 1);
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            matrix_sqrt_psd(&a),
            Err(FrechetError::NotSymmetric { .. })
        ));
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        assert_eq!(
            matrix_sqrt_psd(&a).unwrap_err(),
            FrechetError::NotSquare(1, 2)
        );
    }

    #[test]
    fn closed_forms() {
        let p = stats_1d(0.0, 1.0);
        assert!(frechet_distance(&p, &p).unwrap().value.abs() < 1e-12);
        let r = frechet_distance(&p, &stats_1d(1.0, 1.0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let diag = |a: f64, b: f64| {
            GaussianStats::new(
                DVector::zeros(2),
                DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])),
                5,
            )
            .unwrap()
        };
        let r = frechet_distance(&diag(1.0, 4.0), &diag(4.0, 1.0)).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!((r.value - (r.mean_term + r.trace_term)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let p = stats_1d(0.0, 1.0);
        let q = GaussianStats::new(DVector::zeros(2), DMatrix::identity(2, 2), 3).unwrap();
        assert_eq!(
            frechet_distance(&p, &q).unwrap_err(),
            FrechetError::DimMismatch(1, 2)
        );
    }

    #[test]
    fn epsilon_must_be_non_negative() {
        let p = stats_1d(0.0, 1.0);
        let opts = FrechetOptions {
            diagonal_epsilon: -1.0,
        };
        assert_eq!(
            frechet_distance_with(&p, &p, &opts).unwrap_err(),
            FrechetError::InvalidEpsilon(-1.0)
        );
    }

    #[test]
    fn translated_set_has_pure_mean_term() {
        let base: Vec<Vec<f32>> = vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, -1.0, 0.5],
            vec![2.0, 0.25, -3.0],
            vec![-1.5, 0.0, 1.0],
            vec![0.5, 2.0, 0.0],
        ];
        let c = 0.5f32;
        let shifted: Vec<Vec<f32>> = base
            .iter()
            .map(|r| r.iter().map(|v| v + c).collect())
            .collect();
        let r = fvd(&set(&base), &set(&shifted)).unwrap();
        assert!((r.mean_term - 3.0 * 0.25).abs() < 1e-12);
        assert!(r.trace_term.abs() < 1e-8);
    }

    #[test]
    fn rank_deficiency_is_a_warning() {
        let rows = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]];
        let r = fvd(&set(&rows), &set(&rows)).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert!(r.value.abs() < 1e-6);
    }
}
