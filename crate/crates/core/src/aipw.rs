//! Augmented inverse-probability weights and value estimates.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::Nuisance;

/// `W_a = Y·1{A=a}/π(a) − (1{A=a} − π(a))·Q(a)/π(a)` for one arm.
pub fn aipw_weight(y: f64, received: bool, pi: f64, q: f64) -> f64 {
    let ind = f64::from(received);
    y * ind / pi - (ind - pi) * q / pi
}

/// `(W₁, W₋₁)` for one observation under fitted nuisances.
pub fn compute_weights(obs: &Observation<'_>, nuisance: &Nuisance) -> Result<(f64, f64)> {
    let (pi_plus, pi_minus) = nuisance.propensity.pair(obs.x)?;
    let q_plus = nuisance.outcome.predict(Arm::Plus, obs.x)?;
    let q_minus = nuisance.outcome.predict(Arm::Minus, obs.x)?;
    Ok((
        aipw_weight(obs.y, obs.a == Arm::Plus, pi_plus, q_plus),
        aipw_weight(obs.y, obs.a == Arm::Minus, pi_minus, q_minus),
    ))
}

/// `(Ω₊, Ω₋) = (W₁₊ + W₋₁₋, W₁₋ + W₋₁₊)`.
pub fn decompose(w_plus: f64, w_minus: f64) -> (f64, f64) {
    (
        w_plus.max(0.0) + (-w_minus).max(0.0),
        (-w_plus).max(0.0) + w_minus.max(0.0),
    )
}

/// Per-observation weights for a set of rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AipwWeights {
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub omega_plus: Vec<f64>,
    pub omega_minus: Vec<f64>,
}

impl AipwWeights {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut out = AipwWeights::default();
        for (wp, wm) in pairs {
            let (op, om) = decompose(wp, wm);
            out.w_plus.push(wp);
            out.w_minus.push(wm);
            out.omega_plus.push(op);
            out.omega_minus.push(om);
        }
        out
    }

    /// Weights for every row of `data` under `nuisance`.
    pub fn compute(data: &Dataset, nuisance: &Nuisance) -> Result<Self> {
        let pairs = (0..data.n())
            .map(|i| compute_weights(&data.observation(i), nuisance))
            .collect::<Result<Vec<_>>>()?;
        let w = AipwWeights::from_pairs(pairs);
        if w.w_plus.iter().chain(&w.w_minus).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite AIPW weight".into()));
        }
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.w_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_plus.is_empty()
    }

    /// The weight of the arm `arm` for observation `i`.
    pub fn weight(&self, i: usize, arm: Arm) -> f64 {
        match arm {
            Arm::Plus => self.w_plus[i],
            Arm::Minus => self.w_minus[i],
        }
    }
}

/// A linear rule `sgn(intercept + xᵀβ)` with `sgn(0) = +1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub beta: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
}

impl DecisionRule {
    pub fn new(beta: Vec<f64>) -> Self {
        DecisionRule { beta, intercept: 0.0 }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn decide(&self, x: ArrayView1<'_, f64>) -> Arm {
        Arm::from_score(self.score(x))
    }

    /// Decisions for every row of `data`.
    pub fn decisions(&self, data: &Dataset) -> Result<Vec<Arm>> {
        if data.p() != self.p() {
            return Err(Error::validation(format!(
                "rule has {} coefficients, data has {} covariates",
                self.p(),
                data.p()
            )));
        }
        Ok(data.x().rows().into_iter().map(|x| self.decide(x)).collect())
    }
}

fn check_aligned(weights: &AipwWeights, decisions: &[Arm]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::validation("value estimate over an empty set"));
    }
    if weights.len() != decisions.len() {
        return Err(Error::validation("weights and decisions differ in length"));
    }
    Ok(())
}

/// Per-observation terms `W_{D(X)}` whose mean is the value estimate.
pub fn value_terms(weights: &AipwWeights, decisions: &[Arm]) -> Result<Vec<f64>> {
    check_aligned(weights, decisions)?;
    Ok(decisions.iter().enumerate().map(|(i, d)| weights.weight(i, *d)).collect())
}

/// `E_n[W₁·1{D=1} + W₋₁·1{D=−1}]`.
pub fn value_from_weights(weights: &AipwWeights, decisions: &[Arm]) -> Result<f64> {
    let terms = value_terms(weights, decisions)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `E_n[Ω₊·1{D≠1} + Ω₋·1{D≠−1}]`, the weighted misclassification objective.
pub fn zero_one_loss(weights: &AipwWeights, decisions: &[Arm]) -> Result<f64> {
    check_aligned(weights, decisions)?;
    let total: f64 = decisions
        .iter()
        .enumerate()
        .map(|(i, d)| match d {
            Arm::Plus => weights.omega_minus[i],
            Arm::Minus => weights.omega_plus[i],
        })
        .sum();
    Ok(total / decisions.len() as f64)
}

/// AIPW value of `rule` on `data`, optionally restricted to `rows`.
pub fn value_estimate(data: &Dataset, rows: Option<&[usize]>, rule: &DecisionRule, nuisance: &Nuisance) -> Result<f64> {
    let owned;
    let data = match rows {
        Some(idx) => {
            owned = data.subset(idx);
            &owned
        }
        None => data,
    };
    let weights = AipwWeights::compute(data, nuisance)?;
    value_from_weights(&weights, &rule.decisions(data)?)
}
