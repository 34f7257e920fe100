//! Synthetic scenarios and the Monte Carlo study built on them.
//!
//! Covariates are independent standard normals, `Y = A·Δ(X) + S(X) + ε`
//! with standard normal noise, and treatment is assigned with probability
//! `π(X)`. Scenario I is linear throughout; scenario II has a nonlinear
//! contrast, an exponential main effect and a quadratic propensity, while
//! keeping the optimal decision boundary `Xᵀβ_opt = 0`.

mod baseline;
mod oracle;
mod study;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::KnownNuisance;
use crate::seed::SeedStream;

pub use baseline::{baseline_q, baseline_tests, BaselineFit, BaselineOptions};
pub use oracle::{closed_form_value, true_value_oracle, true_values, OracleValue};
pub use study::{
    aggregate, rate_se, reference_coefficients, run_replication, run_study, CoordinateMetrics, CoordinateRecord,
    McConfig, McMetrics, Method, MethodMetrics, MethodRecord, References, ReplicationRecord, StudyResult,
    ValueCiRecord, ValueMetrics,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "I", alias = "1")]
    I,
    #[serde(rename = "II", alias = "2")]
    II,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::I => "I",
            Scenario::II => "II",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "I" | "i" => Ok(Scenario::I),
            "2" | "II" | "ii" => Ok(Scenario::II),
            other => Err(Error::validation(format!("unknown scenario {other:?}; expected 1 or 2"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub xi: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            scenario: Scenario::I,
            n: 400,
            p: 100,
            xi: 0.7,
        }
    }
}

/// `(1, 1, -1, -1, 0, …)`.
pub fn beta_opt(p: usize) -> Vec<f64> {
    padded(&[1.0, 1.0, -1.0, -1.0], p)
}

/// `(-1, -1, 1, -1, 0, …)`.
pub fn beta_main(p: usize) -> Vec<f64> {
    padded(&[-1.0, -1.0, 1.0, -1.0], p)
}

/// `(1, -1, 0, …)`.
pub fn beta_propensity(p: usize) -> Vec<f64> {
    padded(&[1.0, -1.0], p)
}

fn padded(head: &[f64], p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[..head.len()].copy_from_slice(head);
    v
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `x₁ + x₂ − x₃ − x₄`.
fn opt_index(x: ArrayView1<'_, f64>) -> f64 {
    x[0] + x[1] - x[2] - x[3]
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 8 {
            return Err(Error::validation(format!("scenarios need p >= 8, got {}", self.p)));
        }
        if self.n < 2 {
            return Err(Error::validation("scenarios need n >= 2"));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::validation(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        Ok(())
    }

    /// Treatment contrast `Δ(x)`: half the difference in mean outcome
    /// between the arms.
    pub fn contrast(&self, x: ArrayView1<'_, f64>) -> f64 {
        let u = opt_index(x);
        match self.scenario {
            Scenario::I => self.xi * u,
            Scenario::II => {
                let v = x[0] + x[1] + x[2] + x[3];
                (std_normal_cdf(self.xi * u) - 0.5) * (2.0 * v * v + 2.0 * self.xi)
            }
        }
    }

    /// Main effect `S(x)`.
    pub fn main_effect(&self, x: ArrayView1<'_, f64>) -> f64 {
        let t = -x[0] - x[1] + x[2] - x[3];
        match self.scenario {
            Scenario::I => 0.4 * t,
            Scenario::II => (0.4 * t).exp(),
        }
    }

    /// `pr(A = +1 | x)`.
    pub fn propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self.scenario {
            Scenario::I => expit(0.4 * (x[0] - x[1])),
            Scenario::II => expit(0.25 * (x[0] * x[0] + x[1] * x[1] + x[0] * x[1])),
        }
    }

    /// `E[Y | X = x, A = a]`.
    pub fn outcome(&self, arm: Arm, x: ArrayView1<'_, f64>) -> f64 {
        arm.sign() * self.contrast(x) + self.main_effect(x)
    }

    /// `E[S(X)]`: 0 in scenario I; in scenario II `0.4·Xᵀβ_S ~ N(0, 0.64)`.
    pub fn mean_main_effect(&self) -> f64 {
        match self.scenario {
            Scenario::I => 0.0,
            Scenario::II => 0.32f64.exp(),
        }
    }

    /// True propensity and outcome regression, for the `known` backends.
    pub fn known_nuisance(&self) -> KnownNuisance {
        let a = *self;
        let b = *self;
        KnownNuisance {
            propensity: Some(Arc::new(move |x| a.propensity(x))),
            outcome: Some(Arc::new(move |arm, x| b.outcome(arm, x))),
        }
    }
}

/// Closed-form quantities attached to a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub spec: ScenarioSpec,
    pub contrast: Vec<f64>,
    pub main_effect: Vec<f64>,
    pub propensity: Vec<f64>,
}

/// Draws `spec.n` observations. Covariates, treatments and noise come from
/// separate seed streams, so both scenarios share covariates under one seed.
pub fn gen_scenario(spec: &ScenarioSpec, seed: &SeedStream) -> Result<(Dataset, Truth)> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rx = seed.derive("x").rng();
    let mut ra = seed.derive("a").rng();
    let mut re = seed.derive("noise").rng();
    let x: Array2<f64> = Array2::from_shape_simple_fn((n, p), || rx.sample(StandardNormal));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut truth = Truth {
        spec: *spec,
        contrast: Vec::with_capacity(n),
        main_effect: Vec::with_capacity(n),
        propensity: Vec::with_capacity(n),
    };
    for row in x.rows() {
        let pi = spec.propensity(row);
        let arm = if ra.random::<f64>() < pi { Arm::Plus } else { Arm::Minus };
        let delta = spec.contrast(row);
        let s = spec.main_effect(row);
        let e: f64 = re.sample(StandardNormal);
        y.push(arm.sign() * delta + s + e);
        a.push(arm);
        truth.contrast.push(delta);
        truth.main_effect.push(s);
        truth.propensity.push(pi);
    }
    Ok((Dataset::new(x, a, y)?, truth))
}

#[cfg(test)]
mod tests;
