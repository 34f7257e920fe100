//! Marginal screening by empirical distance correlation.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    /// All column indices, best first.
    pub ranking: Vec<usize>,
    /// Scores aligned with `ranking`.
    pub scores: Vec<f64>,
    pub kept: usize,
}

impl ScreeningResult {
    pub fn selected(&self) -> &[usize] {
        &self.ranking[..self.kept]
    }
}

/// Double-centred distance matrix of `v`, row-major.
fn centred_distances(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n * n];
    let mut row_mean = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for l in 0..n {
            let a = (v[k] - v[l]).abs();
            d[k * n + l] = a;
            s += a;
        }
        row_mean[k] = s / n as f64;
    }
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for k in 0..n {
        for l in 0..n {
            d[k * n + l] += grand - row_mean[k] - row_mean[l];
        }
    }
    d
}

/// Squared distance correlation of `x` against a precomputed centred target
/// matrix `b` with `Σ b²` equal to `b_sq`.
///
/// Because `b` is double-centred, `Σ A_kl B_kl = Σ a_kl B_kl` and the raw
/// distances of `x` never need to be stored.
fn dcor_against(x: &[f64], b: &[f64], b_sq: f64) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let mut row_mean = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for l in 0..n {
            s += (x[k] - x[l]).abs();
        }
        row_mean[k] = s / nf;
    }
    let grand = row_mean.iter().sum::<f64>() / nf;
    let mut cross = 0.0;
    let mut a_sq = 0.0;
    for k in 0..n {
        let row = &b[k * n..(k + 1) * n];
        for l in 0..n {
            let a = (x[k] - x[l]).abs();
            cross += a * row[l];
            a_sq += a * a;
        }
    }
    let r_sq: f64 = row_mean.iter().map(|r| r * r).sum();
    let a_sq = a_sq - 2.0 * nf * r_sq + nf * nf * grand * grand;
    let denom = (a_sq * b_sq).sqrt();
    if !(denom > 0.0) || a_sq <= 1e-12 * nf * nf * grand * grand {
        return 0.0;
    }
    (cross / denom).max(0.0)
}

/// Empirical distance correlation (V-statistic). Zero when either input is
/// constant.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "inputs differ in length");
    if x.is_empty() {
        return 0.0;
    }
    let b = centred_distances(y);
    let b_sq: f64 = b.iter().map(|v| v * v).sum();
    dcor_against(x, &b, b_sq).sqrt()
}

/// Ranks every column of `x` by distance correlation with `target` and keeps
/// the top `d`. Ties keep the lower column index first.
pub fn screen_variables(x: ArrayView2<'_, f64>, target: &[f64], d: usize) -> Result<ScreeningResult> {
    let (n, p) = x.dim();
    if target.len() != n {
        return Err(Error::validation(format!(
            "screening target has {} entries for {n} rows",
            target.len()
        )));
    }
    if d > p {
        return Err(Error::validation(format!("cannot keep {d} of {p} variables")));
    }
    let b = centred_distances(target);
    let b_sq: f64 = b.iter().map(|v| v * v).sum();
    let raw: Vec<f64> = (0..p)
        .map(|j| {
            let col: Vec<f64> = x.column(j).to_vec();
            dcor_against(&col, &b, b_sq).sqrt()
        })
        .collect();
    let mut ranking: Vec<usize> = (0..p).collect();
    ranking.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]).then(i.cmp(&j)));
    let scores = ranking.iter().map(|&j| raw[j]).collect();
    Ok(ScreeningResult {
        ranking,
        scores,
        kept: d,
    })
}

/// `⌊n / ln n⌋`, at least 1, capped at `cap` and `p`.
pub fn screen_count(n: usize, p: usize, cap: usize) -> usize {
    let d = if n < 3 {
        1
    } else {
        (n as f64 / (n as f64).ln()).floor() as usize
    };
    d.max(1).min(cap).min(p)
}
