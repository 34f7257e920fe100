use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lambda_max_design, smooth_value, solve_design, Design, L1Fit, SolverOptions, SubsetLoss};
use crate::data::{make_folds, FoldPlan};
use crate::error::{Error, Result};
use crate::seed::SeedStream;

/// How a penalty level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    /// K-fold cross-validation over a [`LambdaPath`] grid.
    Cv,
    Fixed(f64),
}

/// Log-spaced grid from `lambda_max` down to `min_ratio * lambda_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaPath {
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub cv_folds: usize,
}

impl Default for LambdaPath {
    fn default() -> Self {
        LambdaPath {
            n_lambda: 50,
            min_ratio: 0.01,
            cv_folds: 5,
        }
    }
}

impl LambdaPath {
    /// Strictly positive, strictly descending grid.
    pub fn grid(&self, lambda_max: f64) -> Vec<f64> {
        let top = if lambda_max > 0.0 && lambda_max.is_finite() { lambda_max } else { 1e-10 };
        let n = self.n_lambda.max(1);
        if n == 1 {
            return vec![top];
        }
        let ratio = self.min_ratio.clamp(1e-12, 1.0 - 1e-12);
        (0..n)
            .map(|i| top * ratio.powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    pub grid: Vec<f64>,
    /// Mean out-of-fold loss per grid value (`inf` where some fold failed).
    pub errors: Vec<f64>,
    pub best_index: usize,
}

impl CvCurve {
    pub fn lambda(&self) -> f64 {
        self.grid[self.best_index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedFit {
    pub lambda: f64,
    pub fit: L1Fit,
    pub cv: Option<CvCurve>,
}

fn path_fits<L: SubsetLoss>(design: &Design, loss: &L, grid: &[f64], opts: &SolverOptions) -> Vec<Option<Vec<f64>>> {
    let mut warm = opts.warm_start.clone();
    grid.iter()
        .map(|&lambda| {
            let o = SolverOptions {
                warm_start: warm.clone(),
                record_trace: false,
                ..opts.clone()
            };
            match solve_design(design, loss, lambda, &o) {
                Ok(fit) => {
                    warm = Some(fit.coefficients.clone());
                    Some(fit.coefficients)
                }
                Err(_) => None,
            }
        })
        .collect()
}

/// Cross-validated choice of `lambda` over `grid` (descending). The curve is
/// the out-of-fold smooth loss averaged over all observations; ties go to
/// the larger `lambda`.
pub fn cv_lambda<L: SubsetLoss>(
    features: ArrayView2<'_, f64>,
    loss: &L,
    grid: &[f64],
    folds: &FoldPlan,
    opts: &SolverOptions,
) -> Result<CvCurve> {
    cv_design(&Design::from_rows(features), loss, grid, folds, opts)
}

fn cv_design<L: SubsetLoss>(design: &Design, loss: &L, grid: &[f64], folds: &FoldPlan, opts: &SolverOptions) -> Result<CvCurve> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("lambda grid must be positive and strictly descending"));
    }
    if folds.n() != design.rows() || folds.k() < 2 {
        return Err(Error::validation("CV fold plan does not match the data"));
    }
    let per_fold: Vec<Vec<f64>> = (0..folds.k())
        .into_par_iter()
        .map(|k| {
            let train = folds.complement(k);
            let test = folds.fold(k);
            let fits = path_fits(&design.select_rows(&train), &loss.subset(&train), grid, opts);
            let test_design = design.select_rows(&test);
            let test_loss = loss.subset(&test);
            fits.iter()
                .map(|fit| match fit {
                    Some(theta) => {
                        smooth_value(&test_loss, &test_design.predict(theta)) * test.len() as f64
                    }
                    None => f64::INFINITY,
                })
                .collect()
        })
        .collect();
    let m = design.rows() as f64;
    let errors: Vec<f64> = (0..grid.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / m)
        .map(|e| if e.is_nan() { f64::INFINITY } else { e })
        .collect();
    let mut best_index = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best_index] {
            best_index = i;
        }
    }
    if !errors[best_index].is_finite() {
        return Err(Error::Numerical("no lambda on the grid converged in cross-validation".into()));
    }
    Ok(CvCurve {
        grid: grid.to_vec(),
        errors,
        best_index,
    })
}

/// Fits at a fixed `lambda`, or picks one by cross-validation and refits on
/// all rows along the warm-started path.
pub fn tune<L: SubsetLoss>(
    features: ArrayView2<'_, f64>,
    loss: &L,
    policy: LambdaPolicy,
    path: &LambdaPath,
    opts: &SolverOptions,
    seed: &SeedStream,
) -> Result<TunedFit> {
    let design = Design::from_rows(features);
    match policy {
        LambdaPolicy::Fixed(lambda) => Ok(TunedFit {
            lambda,
            fit: solve_design(&design, loss, lambda, opts)?,
            cv: None,
        }),
        LambdaPolicy::Cv => {
            let m = design.rows();
            if m < 2 {
                return Err(Error::validation("cross-validation needs at least two observations"));
            }
            let lmax = lambda_max_design(&design, loss, opts)?;
            let grid = path.grid(lmax);
            let folds = make_folds(m, path.cv_folds.clamp(2, m), seed)?;
            let curve = cv_design(&design, loss, &grid, &folds, opts)?;
            let mut warm = opts.warm_start.clone();
            let mut last = None;
            for (i, &lambda) in grid[..=curve.best_index].iter().enumerate() {
                let o = SolverOptions {
                    warm_start: warm.clone(),
                    ..opts.clone()
                };
                match solve_design(&design, loss, lambda, &o) {
                    Ok(f) => {
                        warm = Some(f.coefficients.clone());
                        last = Some(f);
                    }
                    Err(e) if i == curve.best_index => return Err(e),
                    Err(_) => {}
                }
            }
            let lambda = curve.lambda();
            let fit = last.expect("path ends at the selected lambda");
            Ok(TunedFit {
                lambda,
                fit,
                cv: Some(curve),
            })
        }
    }
}
