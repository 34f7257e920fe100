//! Replicated simulation study: rejection rates, interval coverage and the
//! value achieved by each method's fitted rule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{baseline_q, baseline_tests, q_design, BaselineOptions};
use super::oracle::{closed_form_value, true_value_oracle, OracleValue};
use super::{gen_scenario, ScenarioSpec};
use crate::aipw::{AipwWeights, DecisionRule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{test_fitted, InferenceOptions, TestReport};
use crate::nuisance::{KnownNuisance, Nuisance, NuisanceOptions, OutcomeKind, PropensityKind};
use crate::pearl::{fit_all, fit_beta, PearlConfig};
use crate::seed::SeedStream;
use crate::solver::{tune, LambdaPolicy, WeightedQuadratic};
use crate::value::{infer_value_detailed, ValueOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pearl,
    BaselineQ,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pearl => "pearl",
            Method::BaselineQ => "baseline-q",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pearl" => Ok(Method::Pearl),
            "baseline-q" | "baseline" | "q" => Ok(Method::BaselineQ),
            other => Err(Error::validation(format!("unknown method {other:?}; expected pearl or baseline-q"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub scenario: ScenarioSpec,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub pearl: PearlConfig,
    pub baseline: BaselineOptions,
    pub inference: InferenceOptions,
    /// 1-based coordinates to test; empty skips testing.
    pub coordinates: Vec<usize>,
    /// Evaluate the full-sample rule with the oracle.
    pub achieved_value: bool,
    /// Run the single-split value interval (surrogate-loss method only).
    pub value_inference: bool,
    pub value: ValueOptions,
    pub oracle_draws: usize,
    /// Sample size of the reference fits that define each method's limiting
    /// coefficients; 0 skips them.
    pub reference_n: usize,
    pub reference_lambda: f64,
    /// Significance level for rejection rates.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            scenario: ScenarioSpec::default(),
            reps: 200,
            methods: vec![Method::Pearl, Method::BaselineQ],
            pearl: PearlConfig::default(),
            baseline: BaselineOptions::default(),
            inference: InferenceOptions::default(),
            coordinates: (1..=8).collect(),
            achieved_value: true,
            value_inference: true,
            value: ValueOptions::default(),
            oracle_draws: 1_000_000,
            reference_n: 100_000,
            reference_lambda: 1e-4,
            alpha: 0.05,
            seed: 1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.pearl.validate()?;
        if self.reps == 0 {
            return Err(Error::validation("reps must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("at least one method is required"));
        }
        if let Some(&j) = self.coordinates.iter().find(|&&j| j == 0 || j > self.scenario.p) {
            return Err(Error::validation(format!(
                "coordinate {j} out of range 1..={}",
                self.scenario.p
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation("alpha must lie in (0, 1)"));
        }
        if !(self.reference_lambda > 0.0) {
            return Err(Error::validation("reference_lambda must be positive"));
        }
        Ok(())
    }

    /// Closed-form nuisances handed to the `known` backends.
    pub fn known(&self) -> KnownNuisance {
        self.scenario.known_nuisance()
    }

    pub fn replication_seed(&self, r: usize) -> SeedStream {
        SeedStream::new(self.seed).derive_indexed("rep", r)
    }

    pub fn replication_data(&self, r: usize) -> Result<Dataset> {
        Ok(gen_scenario(&self.scenario, &self.replication_seed(r).derive("data"))?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRecord {
    pub coordinate: usize,
    pub estimate: f64,
    pub one_step: f64,
    pub se: f64,
    pub z_signed: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// The limiting coefficient coverage is measured against, if known.
    pub target: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCiRecord {
    pub value: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Population value of the rule the interval was built for.
    pub oracle: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub error: Option<String>,
    /// Rule coefficients from the full-sample fit, if it was run.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub tests: Vec<CoordinateRecord>,
    pub achieved_value: Option<f64>,
    pub value_ci: Option<ValueCiRecord>,
}

impl MethodRecord {
    pub(crate) fn failed(method: Method, e: impl std::fmt::Display) -> Self {
        MethodRecord {
            method,
            error: Some(e.to_string()),
            beta: Vec::new(),
            intercept: 0.0,
            tests: Vec::new(),
            achieved_value: None,
            value_ci: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub methods: Vec<MethodRecord>,
}

/// Limiting coefficients per method, indexed by 0-based coordinate.
pub type References = BTreeMap<Method, Vec<f64>>;

fn oracle_value(cfg: &McConfig, rule: &DecisionRule, seed: &SeedStream) -> Result<OracleValue> {
    match closed_form_value(&cfg.scenario, rule)? {
        Some(v) => Ok(OracleValue { value: v, se: 0.0, draws: 0 }),
        None => true_value_oracle(&cfg.scenario, rule, cfg.oracle_draws, seed),
    }
}

fn coverage_target(references: &References, method: Method, j: usize) -> Option<f64> {
    match references.get(&method) {
        Some(r) => Some(r[j - 1]),
        // coordinates past the fourth carry no signal, and their limit is
        // zero by symmetry for both methods
        None if j > 4 => Some(0.0),
        None => None,
    }
}

fn coordinate_record(report: &TestReport, target: Option<f64>) -> CoordinateRecord {
    CoordinateRecord {
        coordinate: report.coordinate,
        estimate: report.estimate,
        one_step: report.one_step,
        se: report.se,
        z_signed: report.z_signed,
        p_value: report.p_value,
        ci_lo: report.ci_lo,
        ci_hi: report.ci_hi,
        target,
        covered: target.map(|t| report.ci_lo <= t && t <= report.ci_hi),
    }
}

fn run_pearl(cfg: &McConfig, data: &Dataset, references: &References, seed: &SeedStream) -> Result<MethodRecord> {
    let known = cfg.known();
    let oracle_seed = seed.derive("oracle");
    let coords: Vec<usize> = cfg.coordinates.iter().map(|j| j - 1).collect();
    let mut record = MethodRecord {
        method: Method::Pearl,
        error: None,
        beta: Vec::new(),
        intercept: 0.0,
        tests: Vec::new(),
        achieved_value: None,
        value_ci: None,
    };
    if !coords.is_empty() || cfg.achieved_value {
        let pseed = seed.derive("pearl");
        let fit = fit_all(data, &cfg.pearl, &known, &pseed)?;
        if !coords.is_empty() {
            let reports = test_fitted(data, &fit, &coords, &cfg.pearl, &cfg.inference, &pseed)?;
            record.tests = reports
                .iter()
                .map(|r| coordinate_record(r, coverage_target(references, Method::Pearl, r.coordinate)))
                .collect();
        }
        if cfg.achieved_value {
            let rule = DecisionRule::new(fit.pooled.clone());
            record.achieved_value = Some(oracle_value(cfg, &rule, &oracle_seed)?.value);
        }
        record.beta = fit.pooled;
    }
    if cfg.value_inference {
        let vf = infer_value_detailed(data, &cfg.pearl, &cfg.value, &known, &seed.derive("value"))?;
        let oracle = oracle_value(cfg, &vf.report.rule, &oracle_seed)?.value;
        let r = vf.report;
        record.value_ci = Some(ValueCiRecord {
            value: r.value,
            se: r.se,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            oracle,
            covered: r.ci_lo <= oracle && oracle <= r.ci_hi,
        });
    }
    Ok(record)
}

fn run_baseline(cfg: &McConfig, data: &Dataset, references: &References, seed: &SeedStream) -> Result<MethodRecord> {
    let oracle_seed = seed.derive("oracle");
    let bseed = seed.derive("baseline");
    let coords: Vec<usize> = cfg.coordinates.iter().map(|j| j - 1).collect();
    let mut record = MethodRecord {
        method: Method::BaselineQ,
        error: None,
        beta: Vec::new(),
        intercept: 0.0,
        tests: Vec::new(),
        achieved_value: None,
        value_ci: None,
    };
    if !coords.is_empty() {
        let (_, reports) = baseline_tests(data, &coords, cfg.pearl.folds, &cfg.baseline, &cfg.inference, &bseed)?;
        record.tests = reports
            .iter()
            .map(|r| coordinate_record(r, coverage_target(references, Method::BaselineQ, r.coordinate)))
            .collect();
    }
    if cfg.achieved_value {
        let fit = baseline_q(data, &cfg.baseline, &bseed.derive("full"))?;
        record.achieved_value = Some(oracle_value(cfg, &fit.rule, &oracle_seed)?.value);
        record.beta = fit.rule.beta;
        record.intercept = fit.rule.intercept;
    }
    Ok(record)
}

/// One replication: a fresh dataset and every requested method on it.
/// Method failures are recorded, not propagated.
pub fn run_replication(r: usize, cfg: &McConfig, references: &References) -> Result<ReplicationRecord> {
    let seed = cfg.replication_seed(r);
    let data = gen_scenario(&cfg.scenario, &seed.derive("data"))?.0;
    let methods = cfg
        .methods
        .iter()
        .map(|&m| {
            let out = match m {
                Method::Pearl => run_pearl(cfg, &data, references, &seed),
                Method::BaselineQ => run_baseline(cfg, &data, references, &seed),
            };
            out.unwrap_or_else(|e| MethodRecord::failed(m, e))
        })
        .collect();
    Ok(ReplicationRecord { rep: r, methods })
}

/// Limiting coefficients of `method`: a single fit on `cfg.reference_n`
/// fresh draws at penalty `cfg.reference_lambda`. The surrogate-loss fit uses
/// the true propensity and the limit of the configured outcome model (the
/// true regression, or zero for the `zero` backend).
pub fn reference_coefficients(cfg: &McConfig, method: Method) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.reference_n < 2 {
        return Err(Error::validation("reference fits need reference_n >= 2"));
    }
    let spec = ScenarioSpec {
        n: cfg.reference_n,
        ..cfg.scenario
    };
    let seed = SeedStream::new(cfg.seed).derive("reference");
    let (data, _) = gen_scenario(&spec, &seed.derive("data"))?;
    match method {
        Method::Pearl => {
            let opts = NuisanceOptions {
                propensity: PropensityKind::Known,
                outcome: match cfg.pearl.nuisance.outcome {
                    OutcomeKind::Zero => OutcomeKind::Zero,
                    _ => OutcomeKind::Known,
                },
                ..cfg.pearl.nuisance.clone()
            };
            let nuisance = Nuisance::fit(&data, &opts, &cfg.known(), &seed)?;
            let weights = AipwWeights::compute(&data, &nuisance)?;
            let pcfg = PearlConfig {
                lambda: LambdaPolicy::Fixed(cfg.reference_lambda),
                ..cfg.pearl.clone()
            };
            Ok(fit_beta(data.x(), &weights, &pcfg, &seed)?.0)
        }
        Method::BaselineQ => {
            let signs: Vec<f64> = data.a().iter().map(|a| a.sign()).collect();
            let z = q_design(data.x(), &signs);
            let loss = WeightedQuadratic::unweighted(data.y().to_vec());
            let opts = BaselineOptions {
                lambda: LambdaPolicy::Fixed(cfg.reference_lambda),
                ..cfg.baseline.clone()
            };
            let mut pen = vec![1.0; z.ncols()];
            pen[0] = 0.0;
            let solver = crate::solver::SolverOptions {
                tolerance: opts.tolerance,
                max_iterations: opts.max_iterations,
                penalty_factors: Some(pen),
                ..Default::default()
            };
            let fit = tune(z.view(), &loss, opts.lambda, &opts.lambda_path, &solver, &seed)?;
            Ok(fit.fit.coefficients[cfg.scenario.p + 2..].to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMetrics {
    pub method: Method,
    pub coordinate: usize,
    pub count: usize,
    pub rejection_rate: f64,
    pub rejection_se: f64,
    pub coverage: Option<f64>,
    pub coverage_se: Option<f64>,
    pub target: Option<f64>,
    pub mean_estimate: f64,
    pub mean_one_step: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMetrics {
    pub count: usize,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_estimate: f64,
    pub mean_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub coordinates: Vec<CoordinateMetrics>,
    pub mean_achieved_value: Option<f64>,
    pub achieved_value_se: Option<f64>,
    pub value_ci: Option<ValueMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMetrics {
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<MethodMetrics>,
}

/// Binomial standard error `√(r(1−r)/R)`.
pub fn rate_se(rate: f64, count: usize) -> f64 {
    (rate * (1.0 - rate) / count as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of a mean; zero for fewer than two values.
fn mean_se(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn rate(flags: impl Iterator<Item = bool>) -> (f64, usize) {
    let (mut hit, mut total) = (0usize, 0usize);
    for f in flags {
        total += 1;
        hit += usize::from(f);
    }
    (hit as f64 / total as f64, total)
}

/// Summarizes replication records in replication order.
pub fn aggregate(records: &[ReplicationRecord], alpha: f64) -> Result<McMetrics> {
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let mut methods: Vec<Method> = sorted.iter().flat_map(|r| r.methods.iter().map(|m| m.method)).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    let mut any_success = false;
    for method in methods {
        let recs: Vec<&MethodRecord> = sorted
            .iter()
            .flat_map(|r| r.methods.iter().filter(move |m| m.method == method))
            .collect();
        let ok: Vec<&MethodRecord> = recs.iter().copied().filter(|m| m.ok()).collect();
        any_success |= !ok.is_empty();
        let mut coords: Vec<usize> = ok.iter().flat_map(|m| m.tests.iter().map(|t| t.coordinate)).collect();
        coords.sort_unstable();
        coords.dedup();
        let coordinates = coords
            .iter()
            .map(|&j| {
                let tests: Vec<&CoordinateRecord> =
                    ok.iter().flat_map(|m| m.tests.iter().filter(|t| t.coordinate == j)).collect();
                let (rej, count) = rate(tests.iter().map(|t| t.p_value < alpha));
                let covered: Vec<bool> = tests.iter().filter_map(|t| t.covered).collect();
                let coverage = (!covered.is_empty()).then(|| rate(covered.iter().copied()).0);
                let est: Vec<f64> = tests.iter().map(|t| t.estimate).collect();
                let one: Vec<f64> = tests.iter().map(|t| t.one_step).collect();
                let se: Vec<f64> = tests.iter().map(|t| t.se).collect();
                CoordinateMetrics {
                    method,
                    coordinate: j,
                    count,
                    rejection_rate: rej,
                    rejection_se: rate_se(rej, count),
                    coverage,
                    coverage_se: coverage.map(|c| rate_se(c, covered.len())),
                    target: tests.iter().find_map(|t| t.target),
                    mean_estimate: mean(&est),
                    mean_one_step: mean(&one),
                    mean_se: mean(&se),
                }
            })
            .collect();
        let achieved: Vec<f64> = ok.iter().filter_map(|m| m.achieved_value).collect();
        let cis: Vec<&ValueCiRecord> = ok.iter().filter_map(|m| m.value_ci.as_ref()).collect();
        let value_ci = (!cis.is_empty()).then(|| {
            let (cov, count) = rate(cis.iter().map(|c| c.covered));
            ValueMetrics {
                count,
                coverage: cov,
                coverage_se: rate_se(cov, count),
                mean_estimate: mean(&cis.iter().map(|c| c.value).collect::<Vec<_>>()),
                mean_oracle: mean(&cis.iter().map(|c| c.oracle).collect::<Vec<_>>()),
            }
        });
        out.push(MethodMetrics {
            method,
            successes: ok.len(),
            failures: recs.len() - ok.len(),
            coordinates,
            mean_achieved_value: (!achieved.is_empty()).then(|| mean(&achieved)),
            achieved_value_se: (!achieved.is_empty()).then(|| mean_se(&achieved)),
            value_ci,
        });
    }
    if !any_success {
        return Err(Error::Numerical("no replication succeeded".into()));
    }
    Ok(McMetrics {
        reps: sorted.len(),
        alpha,
        methods: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub references: References,
    pub records: Vec<ReplicationRecord>,
    pub metrics: McMetrics,
}

/// Reference fits (if requested), all replications in parallel, then
/// aggregation in replication order.
pub fn run_study(cfg: &McConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut references = References::new();
    if cfg.reference_n > 0 && !cfg.coordinates.is_empty() {
        for &m in &cfg.methods {
            references.insert(m, reference_coefficients(cfg, m)?);
        }
    }
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replication(r, cfg, &references))
        .collect::<Result<Vec<_>>>()?;
    let metrics = aggregate(&records, cfg.alpha)?;
    Ok(StudyResult {
        references,
        records,
        metrics,
    })
}
