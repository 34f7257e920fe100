//! Split-and-pooled de-correlated score test and one-step confidence
//! interval for a single coefficient.
//!
//! Each fold contributes a score `S⁽ᵏ⁾`, a variance `σ̂²ₖ`, a partial
//! information `Î⁽ᵏ⁾` and a one-step estimate; the report pools them by
//! plain averaging. The fold-level functions are generic over the loss so the
//! same machinery serves the surrogate-loss rule and a least-squares
//! baseline.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::KnownNuisance;
use crate::pearl::{assemble_loss, fit_all, PearlConfig, PearlFit};
use crate::seed::SeedStream;
use crate::solver::{tune, LambdaPath, LambdaPolicy, SmoothLoss, SolverOptions, WeightedQuadratic};

/// Normal quantile used for the 95% interval.
pub const Z_975: f64 = 1.96;

/// Smallest admissible `|Î⁽ᵏ⁾|`.
pub const MIN_INFORMATION: f64 = 1e-8;

/// Where the gradient in `σ̂²ₖ` is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceAt {
    /// The fold estimate `β̂⁽ᵏ⁾`.
    #[default]
    Estimate,
    /// `β̂⁽ᵏ⁾` with the tested coordinate set to zero.
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceOptions {
    /// Penalty choice for the projection-direction regressions.
    pub lambda: LambdaPolicy,
    pub lambda_path: LambdaPath,
    pub variance_at: VarianceAt,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            lambda: LambdaPolicy::Cv,
            lambda_path: LambdaPath::default(),
            variance_at: VarianceAt::default(),
            tolerance: 1e-7,
            max_iterations: 10_000,
        }
    }
}

/// Loss curvatures `hᵢ` at the predictor `xᵢᵀβ`.
pub fn curvature_weights<L: SmoothLoss>(x: ArrayView2<'_, f64>, loss: &L, beta: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| loss.curvature(i, dot(row.iter(), beta)))
        .collect()
}

fn dot<'a>(row: impl Iterator<Item = &'a f64>, beta: &[f64]) -> f64 {
    row.zip(beta).map(|(a, b)| a * b).sum()
}

/// All columns except `j`.
fn drop_column(x: ArrayView2<'_, f64>, j: usize) -> Array2<f64> {
    let keep: Vec<usize> = (0..x.ncols()).filter(|&c| c != j).collect();
    x.select(Axis(1), &keep)
}

/// `Xⱼ − X₋ⱼᵀw` for every row.
pub fn residuals(x: ArrayView2<'_, f64>, j: usize, w: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut fitted = 0.0;
            let mut c = 0;
            for (col, v) in row.iter().enumerate() {
                if col == j {
                    continue;
                }
                fitted += v * w[c];
                c += 1;
            }
            row[j] - fitted
        })
        .collect()
}

/// Weighted lasso of column `j` on the remaining columns with observation
/// weights `h`. Columns listed in `unpenalized` (original indices) carry no
/// penalty. Returns `w` (length `p − 1`) and the penalty used.
pub fn fit_w(
    x: ArrayView2<'_, f64>,
    j: usize,
    h: &[f64],
    unpenalized: &[usize],
    opts: &InferenceOptions,
    seed: &SeedStream,
) -> Result<(Vec<f64>, f64)> {
    let p = x.ncols();
    if j >= p {
        return Err(Error::validation(format!("coordinate {} out of range 1..={p}", j + 1)));
    }
    if p == 1 {
        return Ok((Vec::new(), 0.0));
    }
    let features = drop_column(x, j);
    let loss = WeightedQuadratic::new(x.column(j).to_vec(), h.to_vec())?;
    let pen: Vec<f64> = (0..p)
        .filter(|&c| c != j)
        .map(|c| if unpenalized.contains(&c) { 0.0 } else { 1.0 })
        .collect();
    let solver = SolverOptions {
        tolerance: opts.tolerance,
        max_iterations: opts.max_iterations,
        penalty_factors: Some(pen),
        ..SolverOptions::default()
    };
    let tuned = tune(features.view(), &loss, opts.lambda, &opts.lambda_path, &solver, seed)?;
    Ok((tuned.fit.coefficients, tuned.lambda))
}

/// `E_n[∇l(β)·r]` with `r` the projection residuals.
pub fn split_score<L: SmoothLoss>(x: ArrayView2<'_, f64>, loss: &L, beta: &[f64], r: &[f64]) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::validation("score over an empty fold"));
    }
    let total: f64 = x
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| loss.derivative(i, dot(row.iter(), beta)) * r[i])
        .sum();
    Ok(total / r.len() as f64)
}

/// `E_n[{∇l(β)}²·r²]`.
pub fn split_variance<L: SmoothLoss>(x: ArrayView2<'_, f64>, loss: &L, beta: &[f64], r: &[f64]) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::validation("variance over an empty fold"));
    }
    let total: f64 = x
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (loss.derivative(i, dot(row.iter(), beta)) * r[i]).powi(2))
        .sum();
    Ok(total / r.len() as f64)
}

/// `E_n[h·Xⱼ·r]`.
pub fn partial_information(x: ArrayView2<'_, f64>, j: usize, h: &[f64], r: &[f64]) -> f64 {
    let total: f64 = (0..r.len()).map(|i| h[i] * x[[i, j]] * r[i]).sum();
    total / r.len() as f64
}

/// `β̂ⱼ − S/Î`.
pub fn one_step(beta_j: f64, score: f64, information: f64) -> Result<f64> {
    if !(information.abs() >= MIN_INFORMATION) {
        return Err(Error::Numerical(format!(
            "partial information {information:.3e} is too close to zero for a one-step correction"
        )));
    }
    Ok(beta_j - score / information)
}

/// Everything one fold contributes for coordinate `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub coordinate: usize,
    pub w: Vec<f64>,
    pub w_lambda: f64,
    pub beta_j: f64,
    /// Score at the null-restricted estimate.
    pub score: f64,
    pub variance: f64,
    pub information: f64,
    /// Score at the unrestricted estimate, used by the one-step correction.
    pub score_full: f64,
    pub one_step: f64,
    pub m: usize,
}

/// Computes the fold contribution for coordinate `j` of a fitted `beta`.
pub fn fold_score<L: SmoothLoss>(
    x: ArrayView2<'_, f64>,
    loss: &L,
    beta: &[f64],
    j: usize,
    unpenalized: &[usize],
    opts: &InferenceOptions,
    seed: &SeedStream,
) -> Result<SplitScore> {
    if x.nrows() != loss.len() || x.ncols() != beta.len() {
        return Err(Error::validation("fold design, loss and coefficients disagree in shape"));
    }
    let h = curvature_weights(x, loss, beta);
    let (w, w_lambda) = fit_w(x, j, &h, unpenalized, opts, seed)?;
    let r = residuals(x, j, &w);
    let mut beta_null = beta.to_vec();
    beta_null[j] = 0.0;
    let score = split_score(x, loss, &beta_null, &r)?;
    let variance = match opts.variance_at {
        VarianceAt::Estimate => split_variance(x, loss, beta, &r)?,
        VarianceAt::Null => split_variance(x, loss, &beta_null, &r)?,
    };
    let information = partial_information(x, j, &h, &r);
    let score_full = split_score(x, loss, beta, &r)?;
    let one = one_step(beta[j], score_full, information)?;
    Ok(SplitScore {
        coordinate: j,
        w,
        w_lambda,
        beta_j: beta[j],
        score,
        variance,
        information,
        score_full,
        one_step: one,
        m: r.len(),
    })
}

/// Pooled test and interval for one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// 1-based coordinate index.
    pub coordinate: usize,
    /// Pooled penalized estimate.
    pub estimate: f64,
    pub one_step: f64,
    /// Standard error of the one-step estimate.
    pub se: f64,
    /// `√n·|S|/σ̂`.
    pub z: f64,
    /// `√n·S/σ̂`, the signed statistic.
    pub z_signed: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub score: f64,
    pub sigma: f64,
    pub information: f64,
    /// Set when the pooled variance is zero.
    pub degenerate: bool,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0usize;
    for x in v {
        s += x;
        c += 1;
    }
    s / c as f64
}

/// Two-sided normal p-value for `z ≥ 0`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Averages the fold contributions and forms the test and interval.
pub fn pool_and_test(folds: &[SplitScore], estimate: f64, n: usize, p: usize) -> Result<TestReport> {
    if folds.len() < 2 {
        return Err(Error::validation("pooling needs at least two folds"));
    }
    let coordinate = folds[0].coordinate;
    if folds.iter().any(|f| f.coordinate != coordinate) {
        return Err(Error::validation("fold results refer to different coordinates"));
    }
    let score = mean(folds.iter().map(|f| f.score));
    let variance = mean(folds.iter().map(|f| f.variance));
    let information = mean(folds.iter().map(|f| f.information));
    let one_step = mean(folds.iter().map(|f| f.one_step));
    let sigma = variance.max(0.0).sqrt();
    let root_n = (n as f64).sqrt();
    let (z_signed, p_value, degenerate) = if sigma > 0.0 {
        let z = root_n * score / sigma;
        (z, two_sided_p(z.abs()), false)
    } else if score == 0.0 {
        (0.0, 1.0, true)
    } else {
        (f64::INFINITY.copysign(score), 0.0, true)
    };
    let z = z_signed.abs();
    if !(information.abs() >= MIN_INFORMATION) {
        return Err(Error::Numerical(format!(
            "pooled partial information {information:.3e} is too close to zero"
        )));
    }
    let se = sigma / (root_n * information.abs());
    Ok(TestReport {
        coordinate: coordinate + 1,
        estimate,
        one_step,
        se,
        z,
        z_signed,
        p_value,
        ci_lo: one_step - Z_975 * se,
        ci_hi: one_step + Z_975 * se,
        k: folds.len(),
        n,
        p,
        score,
        sigma,
        information,
        degenerate,
    })
}

/// Tests each coordinate in `coords` (0-based) using an existing fit.
pub fn test_fitted(
    data: &Dataset,
    fit: &PearlFit,
    coords: &[usize],
    cfg: &PearlConfig,
    opts: &InferenceOptions,
    seed: &SeedStream,
) -> Result<Vec<TestReport>> {
    let p = data.p();
    if let Some(&bad) = coords.iter().find(|&&j| j >= p) {
        return Err(Error::validation(format!("coordinate {} out of range 1..={p}", bad + 1)));
    }
    let blocks: Vec<(Array2<f64>, _)> = (0..fit.k())
        .map(|k| (fit.fold_x(data, k), assemble_loss(&fit.fits[k].weights, cfg.surrogate)))
        .collect();
    let jobs: Vec<(usize, usize)> = coords
        .iter()
        .flat_map(|&j| (0..fit.k()).map(move |k| (j, k)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(j, k)| {
            let (x, loss) = &blocks[k];
            let s = seed.derive_indexed("w", j).derive_indexed("fold", k);
            fold_score(x.view(), loss, &fit.fits[k].beta, j, &[], opts, &s).map_err(|e| e.in_fold(k + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    scores
        .chunks(fit.k())
        .zip(coords)
        .map(|(chunk, &j)| pool_and_test(chunk, fit.pooled[j], data.n(), p))
        .collect()
}

/// Fits once and tests every coordinate in `coords` (0-based).
pub fn test_coordinates(
    data: &Dataset,
    coords: &[usize],
    cfg: &PearlConfig,
    opts: &InferenceOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<(PearlFit, Vec<TestReport>)> {
    let fit = fit_all(data, cfg, known, seed)?;
    let reports = test_fitted(data, &fit, coords, cfg, opts, seed)?;
    Ok((fit, reports))
}

/// Tests coordinate `j` (0-based) by moving it to the first column and
/// running the whole procedure there.
pub fn test_coordinate(
    data: &Dataset,
    j: usize,
    cfg: &PearlConfig,
    opts: &InferenceOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<TestReport> {
    if j >= data.p() {
        return Err(Error::validation(format!("coordinate {} out of range 1..={}", j + 1, data.p())));
    }
    let swapped = data.swap_columns(0, j);
    let (_, mut reports) = test_coordinates(&swapped, &[0], cfg, opts, known, seed)?;
    let mut report = reports.remove(0);
    report.coordinate = j + 1;
    Ok(report)
}
