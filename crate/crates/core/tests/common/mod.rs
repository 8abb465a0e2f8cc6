//! Reference implementations used as test oracles. Plain nested `Vec`s and
//! scalar loops only; nothing here calls into the crate's numeric code.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repaudit::{EmbeddingSet, SetRole};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rows quantized to multiples of 1/64 so they are exact in f32.
pub fn random_rows(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    shift: f64,
    scale: f64,
) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let v = shift + scale * normal(rng);
                    ((v * 64.0).round() / 64.0) as f32
                })
                .collect()
        })
        .collect()
}

pub fn set(role: SetRole, prefix: &str, rows: &[Vec<f32>]) -> EmbeddingSet {
    let ids = (0..rows.len()).map(|i| format!("{prefix}{i:03}")).collect();
    EmbeddingSet::from_rows(prefix, role, rows, ids).unwrap()
}

pub fn rows_of(set: &EmbeddingSet) -> Vec<Vec<f64>> {
    set.rows()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

pub fn naive_cosine(u: &[f32], v: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for i in 0..u.len() {
        let (a, b) = (f64::from(u[i]), f64::from(v[i]));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Double loop over all pairs: rows are real, columns generated.
pub fn naive_matrix(real: &[Vec<f32>], gen: &[Vec<f32>]) -> Mat {
    let mut m = vec![vec![0.0; gen.len()]; real.len()];
    for i in 0..real.len() {
        for j in 0..gen.len() {
            m[i][j] = naive_cosine(&real[i], &gen[j]);
        }
    }
    m
}

pub struct NaiveScore {
    pub best: Vec<(usize, f64)>,
    pub top: f64,
    pub average: f64,
    pub flagged: Vec<usize>,
}

pub fn naive_score(real: &[Vec<f32>], gen: &[Vec<f32>], threshold: f64) -> NaiveScore {
    let m = naive_matrix(real, gen);
    let mut best = Vec::new();
    let mut top = f64::NEG_INFINITY;
    for j in 0..gen.len() {
        let mut b = (0, m[0][j]);
        for (i, row) in m.iter().enumerate() {
            if row[j] > b.1 {
                b = (i, row[j]);
            }
        }
        best.push(b);
        for row in &m {
            if row[j] > top {
                top = row[j];
            }
        }
    }
    let average = best.iter().map(|b| b.1).sum::<f64>() / best.len() as f64;
    let flagged = (0..gen.len()).filter(|&j| best[j].1 >= threshold).collect();
    NaiveScore {
        best,
        top,
        average,
        flagged,
    }
}

/// Two-pass mean and unbiased covariance.
pub fn two_pass_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k];
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= n - 1.0;
        }
    }
    (mean, cov)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

/// Lower-triangular L with L·Lᵀ = a; `None` if a is not positive definite.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Mat) -> Vec<f64> {
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|v| v * v).sum();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-32 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Fréchet distance through the Cholesky route: with Σp = L·Lᵀ, the matrix
/// Lᵀ·Σq·L is symmetric and shares its eigenvalues with Σp·Σq.
pub fn oracle_frechet(mp: &[f64], cp: &Mat, mq: &[f64], cq: &Mat) -> f64 {
    let mean_term: f64 = mp.iter().zip(mq).map(|(a, b)| (a - b) * (a - b)).sum();
    let l = cholesky(cp).expect("oracle needs a positive definite covariance");
    let inner = matmul(&matmul(&transpose(&l), cq), &l);
    let tr_sqrt: f64 = jacobi_eigenvalues(inner)
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let tr = |m: &Mat| (0..m.len()).map(|i| m[i][i]).sum::<f64>();
    mean_term + tr(cp) + tr(cq) - 2.0 * tr_sqrt
}

pub fn oracle_fvd(real: &[Vec<f64>], gen: &[Vec<f64>]) -> f64 {
    let (mp, cp) = two_pass_stats(real);
    let (mq, cq) = two_pass_stats(gen);
    oracle_frechet(&mp, &cp, &mq, &cq)
}

/// Random PSD matrix BᵀB with B of shape (n + extra) x n.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Mat {
    let b: Mat = (0..n + extra)
        .map(|_| (0..n).map(|_| normal(rng)).collect())
        .collect();
    matmul(&transpose(&b), &b)
}

pub fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Generated set where the rows at `copy_at` duplicate real rows and every
/// other row has top cosine below 0.5 against the real set.
pub struct ReplicaFixture {
    pub real: Vec<Vec<f32>>,
    pub gen: Vec<Vec<f32>>,
    pub copies: Vec<usize>,
}

pub fn replica_fixture(seed: u64, n: usize, m: usize, k: usize, dim: usize) -> ReplicaFixture {
    let mut r = rng(seed);
    let real = random_rows(&mut r, n, dim, 0.0, 1.0);
    let mut positions: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        positions.swap(i, r.gen_range(0..=i));
    }
    let mut copies: Vec<usize> = positions[..k].to_vec();
    copies.sort_unstable();
    let mut gen = Vec::with_capacity(m);
    for j in 0..m {
        if copies.contains(&j) {
            gen.push(real[r.gen_range(0..n)].clone());
        } else {
            loop {
                let cand = random_rows(&mut r, 1, dim, 0.0, 1.5).remove(0);
                if cand.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let worst = real
                    .iter()
                    .map(|x| naive_cosine(x, &cand))
                    .fold(f64::NEG_INFINITY, f64::max);
                if worst < 0.5 {
                    gen.push(cand);
                    break;
                }
            }
        }
    }
    ReplicaFixture { real, gen, copies }
}
