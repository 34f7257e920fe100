//! Single-split inference for the value of the fitted rule.
//!
//! The sample is split once. The rule and the nuisance models are fitted on
//! the first part only; the second part supplies the AIPW value estimate and
//! its sample variance.

use serde::{Deserialize, Serialize};

use crate::aipw::{value_terms, AipwWeights, DecisionRule};
use crate::data::{split_half, Dataset};
use crate::error::{Error, Result};
use crate::inference::Z_975;
use crate::nuisance::{KnownNuisance, Nuisance};
use crate::pearl::{fit_all, PearlConfig, PearlFit};
use crate::seed::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueOptions {
    /// Share of the sample used for fitting.
    pub fit_fraction: f64,
}

impl Default for ValueOptions {
    fn default() -> Self {
        ValueOptions { fit_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub value: f64,
    /// `sd / √n_eval`.
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_eval: usize,
    /// Sample standard deviation of the per-observation value terms.
    pub sd: f64,
    pub rule: DecisionRule,
}

/// Point estimate and interval from the evaluation-set terms.
pub fn summarize(terms: &[f64], rule: DecisionRule) -> Result<ValueReport> {
    let m = terms.len();
    if m < 2 {
        return Err(Error::validation("the evaluation set needs at least two observations"));
    }
    let value = terms.iter().sum::<f64>() / m as f64;
    let ss: f64 = terms.iter().map(|t| (t - value).powi(2)).sum();
    let sd = (ss / (m - 1) as f64).sqrt();
    Ok(interval(value, sd, m, rule))
}

/// `value ± 1.96·sd/√n_eval`.
pub fn interval(value: f64, sd: f64, n_eval: usize, rule: DecisionRule) -> ValueReport {
    let se = sd / (n_eval as f64).sqrt();
    ValueReport {
        value,
        se,
        ci_lo: value - Z_975 * se,
        ci_hi: value + Z_975 * se,
        n_eval,
        sd,
        rule,
    }
}

/// Evaluates a fixed rule on `eval` with already fitted nuisance models.
pub fn evaluate_rule(eval: &Dataset, rule: &DecisionRule, nuisance: &Nuisance) -> Result<ValueReport> {
    let weights = AipwWeights::compute(eval, nuisance)?;
    let terms = value_terms(&weights, &rule.decisions(eval)?)?;
    summarize(&terms, rule.clone())
}

/// Everything the single-split procedure produced.
#[derive(Debug, Clone)]
pub struct ValueFit {
    pub report: ValueReport,
    pub fit_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    pub rule_fit: PearlFit,
    pub nuisance: Nuisance,
}

/// Splits, fits the rule and the nuisance models on the first part and
/// evaluates on the second.
pub fn infer_value_detailed(
    data: &Dataset,
    cfg: &PearlConfig,
    opts: &ValueOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<ValueFit> {
    let (fit_rows, eval_rows) = split_half(data.n(), opts.fit_fraction, &seed.derive("value-split"))?;
    let train = data.subset(&fit_rows);
    let eval = data.subset(&eval_rows);
    let rule_fit = fit_all(&train, cfg, known, &seed.derive("value-rule"))?;
    let nuisance = Nuisance::fit(&train, &cfg.nuisance, known, &seed.derive("value-nuisance"))?;
    let rule = DecisionRule::new(rule_fit.pooled.clone());
    let report = evaluate_rule(&eval, &rule, &nuisance)?;
    Ok(ValueFit {
        report,
        fit_rows,
        eval_rows,
        rule_fit,
        nuisance,
    })
}

pub fn infer_value(
    data: &Dataset,
    cfg: &PearlConfig,
    opts: &ValueOptions,
    known: &KnownNuisance,
    seed: &SeedStream,
) -> Result<ValueReport> {
    infer_value_detailed(data, cfg, opts, known, seed).map(|f| f.report)
}
