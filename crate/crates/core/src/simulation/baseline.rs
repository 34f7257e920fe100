//! Lasso Q-learning baseline.
//!
//! `Y` is regressed on `(1, X, A, A·X)` with an unpenalized intercept. The
//! fitted contrast `Q(x, +1) − Q(x, −1)` is twice `α + xᵀγ`, where `α` is
//! the coefficient of `A` and `γ` those of `A·X`, so the rule is
//! `sgn(α + xᵀγ)`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::DecisionRule;
use crate::data::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::inference::{fold_score, pool_and_test, InferenceOptions, TestReport};
use crate::seed::SeedStream;
use crate::solver::{tune, LambdaPath, LambdaPolicy, SolverOptions, WeightedQuadratic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineOptions {
    pub lambda: LambdaPolicy,
    pub lambda_path: LambdaPath,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            lambda: LambdaPolicy::Cv,
            lambda_path: LambdaPath::default(),
            tolerance: 1e-7,
            max_iterations: 10_000,
        }
    }
}

impl BaselineOptions {
    fn solver(&self, columns: usize) -> SolverOptions {
        let mut pen = vec![1.0; columns];
        pen[0] = 0.0;
        SolverOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            penalty_factors: Some(pen),
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    /// Coefficients on `(1, X, A, A·X)`, length `2p + 2`.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub rule: DecisionRule,
}

/// `(1, X, A, A·X)` for the given rows.
pub(crate) fn q_design(x: ArrayView2<'_, f64>, signs: &[f64]) -> Array2<f64> {
    let (n, p) = x.dim();
    Array2::from_shape_fn((n, 2 * p + 2), |(i, c)| match c {
        0 => 1.0,
        c if c <= p => x[[i, c - 1]],
        c if c == p + 1 => signs[i],
        c => signs[i] * x[[i, c - p - 2]],
    })
}

fn rule_from(coef: &[f64], p: usize) -> DecisionRule {
    DecisionRule {
        beta: coef[p + 2..].to_vec(),
        intercept: coef[p + 1],
    }
}

fn fit_rows(data: &Dataset, opts: &BaselineOptions, seed: &SeedStream) -> Result<(Array2<f64>, WeightedQuadratic, BaselineFit)> {
    let signs: Vec<f64> = data.a().iter().map(|a| a.sign()).collect();
    let z = q_design(data.x(), &signs);
    let loss = WeightedQuadratic::unweighted(data.y().to_vec());
    let tuned = tune(z.view(), &loss, opts.lambda, &opts.lambda_path, &opts.solver(z.ncols()), seed)?;
    let coef = tuned.fit.coefficients;
    let rule = rule_from(&coef, data.p());
    Ok((z, loss, BaselineFit { coef, lambda: tuned.lambda, rule }))
}

/// Lasso Q-learning on the whole sample.
pub fn baseline_q(data: &Dataset, opts: &BaselineOptions, seed: &SeedStream) -> Result<BaselineFit> {
    Ok(fit_rows(data, opts, seed)?.2)
}

/// De-correlated score tests for the `A·X_j` coefficients, `j` 0-based,
/// with the same fold splitting as for the surrogate-loss rule. There are
/// no nuisance models here: each fold's lasso is fitted on that fold.
pub fn baseline_tests(
    data: &Dataset,
    coords: &[usize],
    folds: usize,
    opts: &BaselineOptions,
    inference: &InferenceOptions,
    seed: &SeedStream,
) -> Result<(Vec<f64>, Vec<TestReport>)> {
    let p = data.p();
    if let Some(&bad) = coords.iter().find(|&&j| j >= p) {
        return Err(Error::validation(format!("coordinate {} out of range 1..={p}", bad + 1)));
    }
    let plan = make_folds(data.n(), folds, &seed.derive("folds"))?;
    let fits = (0..plan.k())
        .into_par_iter()
        .map(|k| {
            let part = data.subset(&plan.fold(k));
            fit_rows(&part, opts, &seed.derive_indexed("lambda", k)).map_err(|e| e.in_fold(k + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<f64> = (0..2 * p + 2)
        .map(|c| fits.iter().map(|f| f.2.coef[c]).sum::<f64>() / fits.len() as f64)
        .collect();
    let jobs: Vec<(usize, usize)> = coords.iter().flat_map(|&j| (0..plan.k()).map(move |k| (j, k))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(j, k)| {
            let (z, loss, fit) = &fits[k];
            let s = seed.derive_indexed("w", j).derive_indexed("fold", k);
            fold_score(z.view(), loss, &fit.coef, p + 2 + j, &[0], inference, &s).map_err(|e| e.in_fold(k + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = scores
        .chunks(plan.k())
        .zip(coords)
        .map(|(chunk, &j)| {
            let mut r = pool_and_test(chunk, pooled[p + 2 + j], data.n(), p)?;
            r.coordinate = j + 1;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pooled[p + 2..].to_vec(), reports))
}
