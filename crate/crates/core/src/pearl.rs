//! The cross-fitted penalized estimator of the rule coefficients.
//!
//! For each fold the nuisances are fitted on the other folds only, the AIPW
//! weights are evaluated on the fold, and an L1-penalized surrogate loss is
//! minimized on the fold. The pooled estimate is the mean over folds.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::AipwWeights;
use crate::data::{make_folds, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::nuisance::{KnownNuisance, Nuisance, NuisanceOptions};
use crate::seed::SeedStream;
use crate::solver::{tune, CvCurve, LambdaPath, LambdaPolicy, SolverOptions};
use crate::surrogate::{OmegaLoss, SurrogateKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PearlConfig {
    /// Number of cross-fitting folds.
    pub folds: usize,
    pub nuisance: NuisanceOptions,
    pub surrogate: SurrogateKind,
    pub lambda: LambdaPolicy,
    pub lambda_path: LambdaPath,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PearlConfig {
    fn default() -> Self {
        PearlConfig {
            folds: 5,
            nuisance: NuisanceOptions::default(),
            surrogate: SurrogateKind::default(),
            lambda: LambdaPolicy::Cv,
            lambda_path: LambdaPath::default(),
            tolerance: 1e-7,
            max_iterations: 10_000,
        }
    }
}

impl PearlConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..SolverOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::validation("at least two folds are required"));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::validation("solver tolerance and iteration cap must be positive"));
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::validation(format!("invalid fixed lambda {l}")));
            }
        }
        self.nuisance.trim.validate()
    }
}

/// `Ω₊φ(t) + Ω₋φ(−t)` over the given weights.
pub fn assemble_loss(weights: &AipwWeights, surrogate: SurrogateKind) -> OmegaLoss {
    OmegaLoss::new(
        weights.omega_plus.clone(),
        weights.omega_minus.clone(),
        surrogate.build(),
    )
}

/// Minimizes the penalized surrogate loss on one block of rows.
pub fn fit_beta(
    x: ArrayView2<'_, f64>,
    weights: &AipwWeights,
    cfg: &PearlConfig,
    seed: &SeedStream,
) -> Result<(Vec<f64>, f64, Option<CvCurve>)> {
    if weights.omega_plus.iter().chain(&weights.omega_minus).all(|w| *w == 0.0) {
        return Ok((vec![0.0; x.ncols()], 0.0, None));
    }
    let loss = assemble_loss(weights, cfg.surrogate);
    let tuned = tune(x, &loss, cfg.lambda, &cfg.lambda_path, &cfg.solver_options(), seed)?;
    Ok((tuned.fit.coefficients, tuned.lambda, tuned.cv))
}

/// Nuisance models for fold `k`, fitted on the complement of the fold.
pub fn fit_fold_nuisance(
    data: &Dataset,
    folds: &FoldPlan,
    k: usize,
    cfg: &PearlConfig,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<Nuisance> {
    let train = data.subset(&folds.complement(k));
    Nuisance::fit(&train, &cfg.nuisance, known, &seed.derive_indexed("nuisance", k))
}

#[derive(Debug, Clone)]
pub struct FoldFit {
    /// Rows of the fold, ascending.
    pub rows: Vec<usize>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Weights on the fold's rows from out-of-fold nuisances.
    pub weights: AipwWeights,
    pub cv: Option<CvCurve>,
}

/// The per-fold estimate for fold `k`.
pub fn fit_fold(
    data: &Dataset,
    folds: &FoldPlan,
    k: usize,
    cfg: &PearlConfig,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<FoldFit> {
    let rows = folds.fold(k);
    if rows.is_empty() || rows.len() == data.n() {
        return Err(Error::validation("fold and its complement must both be nonempty"));
    }
    let nuisance = fit_fold_nuisance(data, folds, k, cfg, known, seed)?;
    let block = data.subset(&rows);
    let weights = AipwWeights::compute(&block, &nuisance)?;
    let (beta, lambda, cv) = fit_beta(block.x(), &weights, cfg, &seed.derive_indexed("lambda", k))?;
    Ok(FoldFit {
        rows,
        beta,
        lambda,
        weights,
        cv,
    })
}

#[derive(Debug, Clone)]
pub struct PearlFit {
    pub folds: FoldPlan,
    pub fits: Vec<FoldFit>,
    pub pooled: Vec<f64>,
}

impl PearlFit {
    pub fn k(&self) -> usize {
        self.fits.len()
    }

    /// Covariates of fold `k`'s rows.
    pub fn fold_x(&self, data: &Dataset, k: usize) -> Array2<f64> {
        data.x().select(ndarray::Axis(0), &self.fits[k].rows)
    }
}

/// Mean of equal-length vectors.
pub fn pool(vectors: &[Vec<f64>]) -> Vec<f64> {
    let p = vectors.first().map_or(0, Vec::len);
    let k = vectors.len() as f64;
    (0..p)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / k)
        .collect()
}

/// Fits every fold on `folds` (concurrently) and pools.
pub fn fit_with_folds(
    data: &Dataset,
    folds: FoldPlan,
    cfg: &PearlConfig,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<PearlFit> {
    cfg.validate()?;
    if folds.n() != data.n() {
        return Err(Error::validation("fold plan does not match the data"));
    }
    let fits = (0..folds.k())
        .into_par_iter()
        .map(|k| fit_fold(data, &folds, k, cfg, known, seed).map_err(|e| e.in_fold(k + 1)))
        .collect::<Result<Vec<_>>>()?;
    let pooled = pool(&fits.iter().map(|f| f.beta.clone()).collect::<Vec<_>>());
    Ok(PearlFit { folds, fits, pooled })
}

/// Draws a fold plan from `seed` and fits every fold.
pub fn fit_all(data: &Dataset, cfg: &PearlConfig, known: &KnownNuisance, seed: &SeedStream) -> Result<PearlFit> {
    cfg.validate()?;
    let folds = make_folds(data.n(), cfg.folds, &seed.derive("folds"))?;
    fit_with_folds(data, folds, cfg, known, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;
    use crate::nuisance::{OutcomeKind, PropensityKind};
    use ndarray::{arr1, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scenario(n: usize, p: usize, xi: f64, seed: &SeedStream) -> Dataset {
        let mut rng = seed.rng();
        let x: Array2<f64> = Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal));
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for row in x.rows() {
            let pi = 1.0 / (1.0 + (-0.4 * (row[0] - row[1])).exp());
            let arm = if rng.random::<f64>() < pi { Arm::Plus } else { Arm::Minus };
            let delta = xi * (row[0] + row[1] - row[2] - row[3]);
            let s = 0.4 * (-row[0] - row[1] + row[2] - row[3]);
            let e: f64 = rng.sample(StandardNormal);
            y.push(arm.sign() * delta + s + e);
            a.push(arm);
        }
        Dataset::new(x, a, y).unwrap()
    }

    fn fast_cfg() -> PearlConfig {
        PearlConfig {
            nuisance: NuisanceOptions {
                propensity: PropensityKind::L1Logistic,
                outcome: OutcomeKind::L1Linear,
                ..NuisanceOptions::default()
            },
            ..PearlConfig::default()
        }
    }

    #[test]
    fn symmetric_block_gives_zero() {
        let mut rng = SeedStream::new(30).rng();
        let half = Array2::from_shape_fn((20, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let x = ndarray::concatenate![ndarray::Axis(0), half, -&half];
        let pairs: Vec<(f64, f64)> = (0..20).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
        let w = AipwWeights::from_pairs(pairs.iter().chain(&pairs).copied());
        let cfg = PearlConfig {
            lambda: LambdaPolicy::Fixed(0.01),
            ..PearlConfig::default()
        };
        let (beta, _, _) = fit_beta(x.view(), &w, &cfg, &SeedStream::new(0)).unwrap();
        assert!(beta.iter().all(|b| b.abs() < 1e-6), "{beta:?}");
    }

    #[test]
    fn negated_covariates_negate_estimate() {
        let data = scenario(300, 10, 1.0, &SeedStream::new(31));
        let s = SeedStream::new(32);
        let cfg = PearlConfig::default();
        let a = fit_all(&data, &cfg, &KnownNuisance::default(), &s).unwrap();
        let b = fit_all(&data.negated(), &cfg, &KnownNuisance::default(), &s).unwrap();
        for (fa, fb) in a.fits.iter().zip(&b.fits) {
            assert_eq!(fa.lambda, fb.lambda);
            for (x, y) in fa.beta.iter().zip(&fb.beta) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn pooled_is_mean_of_folds() {
        let data = scenario(200, 6, 1.0, &SeedStream::new(33));
        let fit = fit_all(&data, &fast_cfg(), &KnownNuisance::default(), &SeedStream::new(34)).unwrap();
        assert_eq!(fit.k(), 5);
        for j in 0..6 {
            let mut s = 0.0;
            for f in &fit.fits {
                s += f.beta[j];
            }
            assert_eq!(fit.pooled[j], s / 5.0);
        }
        assert_eq!(pool(&vec![vec![1.0, 2.0]; 3]), vec![1.0, 2.0]);
    }

    #[test]
    fn deterministic() {
        let data = scenario(200, 6, 1.0, &SeedStream::new(35));
        let s = SeedStream::new(36);
        let a = fit_all(&data, &PearlConfig::default(), &KnownNuisance::default(), &s).unwrap();
        let b = fit_all(&data, &PearlConfig::default(), &KnownNuisance::default(), &s).unwrap();
        assert_eq!(a.pooled, b.pooled);
        assert_eq!(a.folds, b.folds);
    }

    #[test]
    fn nuisance_never_sees_its_fold() {
        let data = scenario(200, 6, 1.0, &SeedStream::new(37));
        let s = SeedStream::new(38);
        let folds = make_folds(200, 5, &s).unwrap();
        for cfg in [PearlConfig::default(), fast_cfg()] {
            let k = 2;
            let before = fit_fold_nuisance(&data, &folds, k, &cfg, &KnownNuisance::default(), &s).unwrap();
            let mut y = data.y().to_vec();
            for i in folds.fold(k) {
                y[i] += 100.0;
            }
            let mutated = data.with_outcomes(y).unwrap();
            let after = fit_fold_nuisance(&mutated, &folds, k, &cfg, &KnownNuisance::default(), &s).unwrap();
            for row in data.x().rows() {
                for arm in Arm::BOTH {
                    assert_eq!(before.outcome.predict(arm, row).unwrap(), after.outcome.predict(arm, row).unwrap());
                    assert_eq!(before.propensity.predict(arm, row).unwrap(), after.propensity.predict(arm, row).unwrap());
                }
            }
        }
    }

    #[test]
    fn recovers_optimal_rule_direction() {
        let data = scenario(2000, 50, 1.0, &SeedStream::new(39));
        let fit = fit_all(&data, &fast_cfg(), &KnownNuisance::default(), &SeedStream::new(40)).unwrap();
        let fresh = scenario(2000, 50, 1.0, &SeedStream::new(41));
        let opt = arr1(&[1.0, 1.0, -1.0, -1.0]);
        for f in &fit.fits {
            let agree = fresh
                .x()
                .rows()
                .into_iter()
                .filter(|r| {
                    let a = r.iter().zip(&f.beta).map(|(x, b)| x * b).sum::<f64>() >= 0.0;
                    let b = r.slice(ndarray::s![..4]).dot(&opt) >= 0.0;
                    a == b
                })
                .count() as f64
                / 2000.0;
            assert!(agree >= 0.9, "agreement {agree}");
        }
    }

    #[test]
    fn fold_errors_name_the_fold() {
        let data = scenario(40, 5, 1.0, &SeedStream::new(42));
        let cfg = PearlConfig {
            nuisance: NuisanceOptions {
                min_arm_size: 1000,
                ..NuisanceOptions::default()
            },
            ..PearlConfig::default()
        };
        let err = fit_all(&data, &cfg, &KnownNuisance::default(), &SeedStream::new(0)).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 1, .. }), "{err}");
        assert_eq!(err.kind(), crate::error::ErrorKind::Validation);
    }

    #[test]
    fn config_validation() {
        let bad = PearlConfig {
            folds: 1,
            ..PearlConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&PearlConfig::default()).unwrap();
        let back: PearlConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PearlConfig::default());
    }
}
