//! Population value of a linear rule under a known scenario.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioSpec};
use crate::aipw::DecisionRule;
use crate::error::{Error, Result};
use crate::seed::SeedStream;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    /// Monte Carlo standard error; zero for closed-form values.
    pub se: f64,
    pub draws: usize,
}

fn check_rule(spec: &ScenarioSpec, rule: &DecisionRule) -> Result<()> {
    if rule.p() != spec.p {
        return Err(Error::validation(format!(
            "rule has {} coefficients, scenario has p = {}",
            rule.p(),
            spec.p
        )));
    }
    Ok(())
}

/// Exact value in scenario I. With `γ` the rule coefficients, `c` its
/// intercept and `s = ‖γ‖`, `E[Xᵀβ_opt · sgn(c + Xᵀγ)] = 2 (β_optᵀγ) φ(c/s) / s`.
/// Returns `None` for scenario II.
pub fn closed_form_value(spec: &ScenarioSpec, rule: &DecisionRule) -> Result<Option<f64>> {
    check_rule(spec, rule)?;
    if spec.scenario != Scenario::I {
        return Ok(None);
    }
    let s = rule.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if s == 0.0 {
        return Ok(Some(spec.mean_main_effect()));
    }
    let inner = rule.beta[0] + rule.beta[1] - rule.beta[2] - rule.beta[3];
    let z = rule.intercept / s;
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok(Some(spec.mean_main_effect() + 2.0 * spec.xi * inner * density / s))
}

/// Coordinates of each rule's `β_{5:}` in an orthonormal basis of their
/// span (modified Gram-Schmidt). Every row has the basis length.
pub(super) fn tail_coordinates(rules: &[DecisionRule]) -> Vec<Vec<f64>> {
    let tails: Vec<&[f64]> = rules.iter().map(|r| &r.beta[4..]).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for t in &tails {
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = t.to_vec();
        for q in &basis {
            let c: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(v, q)| *v -= c * q);
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn > 1e-10 * norm && rn > 0.0 {
            r.iter_mut().for_each(|v| *v /= rn);
            basis.push(r);
        }
    }
    tails
        .iter()
        .map(|t| basis.iter().map(|q| q.iter().zip(*t).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// Monte Carlo values of several rules on common draws.
///
/// `V(D) = E[S(X)] + E[Δ(X)·D(X)]`. The first term is known exactly. The
/// contrast depends on the first four covariates only, so each draw needs
/// those four plus the rules' remaining parts `Σ_{l>4} γ_l X_l`. These are
/// jointly normal; they are drawn exactly as `Σ_j c_kj Z_j` from an
/// orthonormal basis of the rules' tail vectors, with one normal per basis
/// vector.
pub fn true_values(spec: &ScenarioSpec, rules: &[DecisionRule], m: usize, seed: &SeedStream) -> Result<Vec<OracleValue>> {
    spec.validate()?;
    for rule in rules {
        check_rule(spec, rule)?;
    }
    if m < 2 {
        return Err(Error::validation("the oracle needs at least two draws"));
    }
    let tails = tail_coordinates(rules);
    let rank = tails.first().map_or(0, Vec::len);
    let chunks = m.div_ceil(CHUNK);
    // per chunk and rule: (sum, sum of squares)
    let partial: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.derive_indexed("chunk", c).rng();
            let len = CHUNK.min(m - c * CHUNK);
            let mut acc = vec![(0.0, 0.0); rules.len()];
            let mut x = ndarray::Array1::<f64>::zeros(4);
            let mut z = vec![0.0; rank];
            for _ in 0..len {
                for v in x.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let delta = spec.contrast(x.view());
                for (k, rule) in rules.iter().enumerate() {
                    let b = &rule.beta;
                    let tail: f64 = tails[k].iter().zip(&z).map(|(c, z)| c * z).sum();
                    let score = rule.intercept + b[0] * x[0] + b[1] * x[1] + b[2] * x[2] + b[3] * x[3] + tail;
                    let term = if score >= 0.0 { delta } else { -delta };
                    acc[k].0 += term;
                    acc[k].1 += term * term;
                }
            }
            acc
        })
        .collect();
    let mf = m as f64;
    Ok((0..rules.len())
        .map(|k| {
            let sum: f64 = partial.iter().map(|p| p[k].0).sum();
            let sq: f64 = partial.iter().map(|p| p[k].1).sum();
            let mean = sum / mf;
            let var = ((sq - mf * mean * mean) / (mf - 1.0)).max(0.0);
            OracleValue {
                value: spec.mean_main_effect() + mean,
                se: (var / mf).sqrt(),
                draws: m,
            }
        })
        .collect())
}

/// Monte Carlo value of one rule from `m` fresh draws.
pub fn true_value_oracle(spec: &ScenarioSpec, rule: &DecisionRule, m: usize, seed: &SeedStream) -> Result<OracleValue> {
    Ok(true_values(spec, std::slice::from_ref(rule), m, seed)?.remove(0))
}
