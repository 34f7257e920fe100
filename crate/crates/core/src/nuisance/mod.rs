//! Propensity and outcome models.
//!
//! Both are fitted on one subset of the data and evaluated on another. The
//! propensity is always returned as a trimmed pair summing to exactly one.

mod kernel;
mod linear;
mod screening;

use std::fmt;
use std::sync::Arc;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::solver::{LambdaPath, LambdaPolicy, WeightedQuadratic};
use crate::surrogate::{Logistic, OmegaLoss};

pub use kernel::{BandwidthRule, KernelRegression};
pub use linear::LinearPredictor;
pub use screening::{distance_correlation, screen_count, screen_variables, ScreeningResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityKind {
    L1Logistic,
    ScreenKernel,
    /// A closed-form propensity supplied through [`KnownNuisance`].
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    L1Linear,
    ScreenKernel,
    /// `Q̂ ≡ 0`.
    Zero,
    /// A closed-form outcome regression supplied through [`KnownNuisance`].
    Known,
}

/// Clamp bounds for the propensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trim {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Trim {
    fn default() -> Self {
        Trim { lo: 0.1, hi: 0.9 }
    }
}

impl Trim {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo <= 0.5 && self.hi >= 0.5 && self.hi < 1.0) {
            return Err(Error::validation(format!(
                "trim bounds ({}, {}) must satisfy 0 < lo <= 0.5 <= hi < 1",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Trimmed `(π(+1), π(-1))` from a raw estimate of `pr(A = +1)`.
    ///
    /// The smaller member is computed first and the larger as its exact
    /// complement, so the pair sums to 1.0 in floating point.
    pub fn pair(&self, raw: f64) -> (f64, f64) {
        let p = if raw.is_nan() { 0.5 } else { raw.clamp(self.lo, self.hi) };
        let small = if p <= 0.5 { p } else { 1.0 - p };
        let small = small.max(self.lo).max(1.0 - self.hi).min(0.5);
        let big = 1.0 - small;
        if p <= 0.5 {
            (small, big)
        } else {
            (big, small)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceOptions {
    pub propensity: PropensityKind,
    pub outcome: OutcomeKind,
    pub trim: Trim,
    pub bandwidth: BandwidthRule,
    pub bandwidth_cv: bool,
    /// Upper limit on the screening keep-count.
    pub max_screen: usize,
    /// Smallest arm subsample the kernel outcome backend accepts.
    pub min_arm_size: usize,
    pub lambda_path: LambdaPath,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions {
            propensity: PropensityKind::ScreenKernel,
            outcome: OutcomeKind::ScreenKernel,
            trim: Trim::default(),
            bandwidth: BandwidthRule::default(),
            bandwidth_cv: true,
            max_screen: 20,
            min_arm_size: 20,
            lambda_path: LambdaPath::default(),
        }
    }
}

pub type PropensityFn = Arc<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>;
pub type OutcomeFn = Arc<dyn Fn(Arm, ArrayView1<'_, f64>) -> f64 + Send + Sync>;

/// Closed-form nuisances for the `known` backends.
#[derive(Clone, Default)]
pub struct KnownNuisance {
    /// `pr(A = +1 | x)` before trimming.
    pub propensity: Option<PropensityFn>,
    pub outcome: Option<OutcomeFn>,
}

impl fmt::Debug for KnownNuisance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnownNuisance")
            .field("propensity", &self.propensity.is_some())
            .field("outcome", &self.outcome.is_some())
            .finish()
    }
}

fn check_arms(data: &Dataset) -> Result<()> {
    for arm in Arm::BOTH {
        if data.count(arm) == 0 {
            return Err(Error::validation(format!(
                "no observations with A = {}",
                arm.sign()
            )));
        }
    }
    Ok(())
}

fn check_dim(expected: usize, x: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != expected {
        return Err(Error::validation(format!(
            "covariate vector has length {}, model expects {expected}",
            x.len()
        )));
    }
    Ok(())
}

#[derive(Clone)]
enum PropensityFit {
    Logistic(LinearPredictor),
    Kernel(KernelRegression),
    Known(PropensityFn),
}

#[derive(Clone)]
pub struct PropensityModel {
    kind: PropensityKind,
    trim: Trim,
    p: usize,
    fit: PropensityFit,
}

impl fmt::Debug for PropensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PropensityModel")
            .field("kind", &self.kind)
            .field("trim", &self.trim)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl PropensityModel {
    pub fn kind(&self) -> PropensityKind {
        self.kind
    }

    pub fn trim(&self) -> Trim {
        self.trim
    }

    /// Untrimmed estimate of `pr(A = +1 | x)`.
    pub fn raw(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        check_dim(self.p, x)?;
        Ok(match &self.fit {
            PropensityFit::Logistic(lin) => expit(lin.eval(x)),
            PropensityFit::Kernel(k) => k.predict(x),
            PropensityFit::Known(f) => f(x),
        })
    }

    /// Trimmed `(π̂(+1; x), π̂(-1; x))`.
    pub fn pair(&self, x: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
        Ok(self.trim.pair(self.raw(x)?))
    }

    pub fn predict(&self, arm: Arm, x: ArrayView1<'_, f64>) -> Result<f64> {
        let (plus, minus) = self.pair(x)?;
        Ok(match arm {
            Arm::Plus => plus,
            Arm::Minus => minus,
        })
    }

    /// Coefficients of the logistic backend on the original scale.
    pub fn linear(&self) -> Option<&LinearPredictor> {
        match &self.fit {
            PropensityFit::Logistic(lin) => Some(lin),
            _ => None,
        }
    }

    /// Columns kept by screening for the kernel backend.
    pub fn screened(&self) -> Option<&[usize]> {
        match &self.fit {
            PropensityFit::Kernel(k) => Some(k.columns()),
            _ => None,
        }
    }
}

#[derive(Clone)]
enum ArmFit {
    Constant(f64),
    Linear(LinearPredictor),
    Kernel(KernelRegression),
    Known(OutcomeFn),
}

impl ArmFit {
    fn eval(&self, arm: Arm, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            ArmFit::Constant(c) => *c,
            ArmFit::Linear(lin) => lin.eval(x),
            ArmFit::Kernel(k) => k.predict(x),
            ArmFit::Known(f) => f(arm, x),
        }
    }
}

#[derive(Clone)]
pub struct OutcomeModel {
    kind: OutcomeKind,
    p: usize,
    plus: ArmFit,
    minus: ArmFit,
}

impl fmt::Debug for OutcomeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutcomeModel")
            .field("kind", &self.kind)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl OutcomeModel {
    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn predict(&self, arm: Arm, x: ArrayView1<'_, f64>) -> Result<f64> {
        check_dim(self.p, x)?;
        Ok(match arm {
            Arm::Plus => self.plus.eval(arm, x),
            Arm::Minus => self.minus.eval(arm, x),
        })
    }

    /// The per-arm linear fit, if that arm used the linear backend.
    pub fn linear(&self, arm: Arm) -> Option<&LinearPredictor> {
        let fit = match arm {
            Arm::Plus => &self.plus,
            Arm::Minus => &self.minus,
        };
        match fit {
            ArmFit::Linear(lin) => Some(lin),
            _ => None,
        }
    }
}

fn screened_kernel(data: &Dataset, target: &[f64], opts: &NuisanceOptions) -> Result<KernelRegression> {
    let d = screen_count(data.n(), data.p(), opts.max_screen);
    let screen = screen_variables(data.x(), target, d)?;
    KernelRegression::fit(data.x(), target, screen.selected(), opts.bandwidth, opts.bandwidth_cv)
}

/// Fits `pr(A = +1 | X)` on `data`.
pub fn fit_propensity(
    data: &Dataset,
    opts: &NuisanceOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<PropensityModel> {
    opts.trim.validate()?;
    check_arms(data)?;
    let fit = match opts.propensity {
        PropensityKind::L1Logistic => {
            let plus: Vec<f64> = data.a().iter().map(|a| f64::from(*a == Arm::Plus)).collect();
            let minus = plus.iter().map(|v| 1.0 - v).collect();
            let loss = OmegaLoss::new(plus, minus, Arc::new(Logistic));
            PropensityFit::Logistic(linear::fit_penalized(
                data.x(),
                &loss,
                LambdaPolicy::Cv,
                &opts.lambda_path,
                &seed.derive("propensity"),
            )?)
        }
        PropensityKind::ScreenKernel => {
            let target: Vec<f64> = data.a().iter().map(|a| f64::from(*a == Arm::Plus)).collect();
            PropensityFit::Kernel(screened_kernel(data, &target, opts)?)
        }
        PropensityKind::Known => PropensityFit::Known(known.propensity.clone().ok_or_else(|| {
            Error::validation("the known propensity backend needs a closed-form propensity")
        })?),
    };
    Ok(PropensityModel {
        kind: opts.propensity,
        trim: opts.trim,
        p: data.p(),
        fit,
    })
}

fn fit_arm(data: &Dataset, arm: Arm, opts: &NuisanceOptions, known: &KnownNuisance, seed: &SeedStream) -> Result<ArmFit> {
    if opts.outcome == OutcomeKind::Zero {
        return Ok(ArmFit::Constant(0.0));
    }
    if opts.outcome == OutcomeKind::Known {
        return known
            .outcome
            .clone()
            .map(ArmFit::Known)
            .ok_or_else(|| Error::validation("the known outcome backend needs a closed-form outcome regression"));
    }
    let idx: Vec<usize> = (0..data.n()).filter(|&i| data.a()[i] == arm).collect();
    let sub = data.subset(&idx);
    let y = sub.y();
    if y.iter().all(|v| *v == y[0]) {
        return Ok(ArmFit::Constant(y[0]));
    }
    match opts.outcome {
        OutcomeKind::L1Linear => {
            let loss = WeightedQuadratic::unweighted(y.to_vec());
            let label = if arm == Arm::Plus { "outcome:+1" } else { "outcome:-1" };
            Ok(ArmFit::Linear(linear::fit_penalized(
                sub.x(),
                &loss,
                LambdaPolicy::Cv,
                &opts.lambda_path,
                &seed.derive(label),
            )?))
        }
        OutcomeKind::ScreenKernel => {
            if sub.n() < opts.min_arm_size {
                return Err(Error::validation(format!(
                    "arm A = {} has {} observations, the kernel backend needs at least {}",
                    arm.sign(),
                    sub.n(),
                    opts.min_arm_size
                )));
            }
            Ok(ArmFit::Kernel(screened_kernel(&sub, y, opts)?))
        }
        OutcomeKind::Zero | OutcomeKind::Known => unreachable!(),
    }
}

/// Fits `E(Y | X, A = a)` separately on each arm of `data`.
pub fn fit_outcome(
    data: &Dataset,
    opts: &NuisanceOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<OutcomeModel> {
    check_arms(data)?;
    Ok(OutcomeModel {
        kind: opts.outcome,
        p: data.p(),
        plus: fit_arm(data, Arm::Plus, opts, known, seed)?,
        minus: fit_arm(data, Arm::Minus, opts, known, seed)?,
    })
}

/// Fitted propensity and outcome models from one training subset.
#[derive(Debug, Clone)]
pub struct Nuisance {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
}

impl Nuisance {
    pub fn fit(data: &Dataset, opts: &NuisanceOptions, known: &KnownNuisance, seed: &SeedStream) -> Result<Self> {
        Ok(Nuisance {
            propensity: fit_propensity(data, opts, known, seed)?,
            outcome: fit_outcome(data, opts, known, seed)?,
        })
    }
}
