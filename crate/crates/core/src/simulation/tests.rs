use super::*;
use crate::aipw::DecisionRule;
use crate::nuisance::{OutcomeKind, PropensityKind};
use crate::pearl::PearlConfig;
use ndarray::Array1;
use proptest::prelude::*;

fn spec(scenario: Scenario, n: usize, xi: f64) -> ScenarioSpec {
    ScenarioSpec { scenario, n, p: 10, xi }
}

#[test]
fn truth_vectors_are_padded() {
    assert_eq!(beta_opt(8), vec![1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(beta_main(9)[..5], [-1.0, -1.0, 1.0, -1.0, 0.0]);
    assert_eq!(beta_propensity(8)[..3], [1.0, -1.0, 0.0]);
}

#[test]
fn spec_validation() {
    assert!(spec(Scenario::I, 100, 0.5).validate().is_ok());
    assert!(ScenarioSpec { p: 7, ..spec(Scenario::I, 100, 0.5) }.validate().is_err());
    assert!(spec(Scenario::I, 1, 0.5).validate().is_err());
    assert!(spec(Scenario::I, 100, 1.5).validate().is_err());
    assert!(spec(Scenario::I, 100, f64::NAN).validate().is_err());
}

#[test]
fn scenario_parsing() {
    assert_eq!("1".parse::<Scenario>().unwrap(), Scenario::I);
    assert_eq!("II".parse::<Scenario>().unwrap(), Scenario::II);
    assert!("3".parse::<Scenario>().is_err());
    assert_eq!(serde_json::to_string(&Scenario::II).unwrap(), "\"II\"");
    assert_eq!(serde_json::from_str::<Scenario>("\"1\"").unwrap(), Scenario::I);
}

#[test]
fn gaussian_covariate_moments() {
    let s = ScenarioSpec { scenario: Scenario::II, n: 5000, p: 12, xi: 0.5 };
    let (data, _) = gen_scenario(&s, &SeedStream::new(3)).unwrap();
    let n = data.n() as f64;
    for col in data.x().columns() {
        let m = col.mean().unwrap();
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 4.0 / n.sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "variance {v}");
    }
}

#[test]
fn truth_bundle_matches_generator() {
    let s = spec(Scenario::I, 300, 0.7);
    let (data, truth) = gen_scenario(&s, &SeedStream::new(1)).unwrap();
    let xs = data.x();
    for i in 0..data.n() {
        let x = xs.row(i);
        let idx = x[0] + x[1] - x[2] - x[3];
        assert!((truth.contrast[i] - 0.7 * idx).abs() < 1e-12);
        assert!((truth.main_effect[i] - 0.4 * (-x[0] - x[1] + x[2] - x[3])).abs() < 1e-12);
        let pi = 1.0 / (1.0 + (-0.4 * (x[0] - x[1])).exp());
        assert!((truth.propensity[i] - pi).abs() < 1e-12);
    }
}

#[test]
fn zero_xi_removes_the_effect() {
    let s = spec(Scenario::I, 200, 0.0);
    let (_, truth) = gen_scenario(&s, &SeedStream::new(2)).unwrap();
    assert!(truth.contrast.iter().all(|&d| d == 0.0));
    let rule = DecisionRule::new(beta_opt(10));
    assert_eq!(closed_form_value(&s, &rule).unwrap(), Some(0.0));
}

#[test]
fn generation_is_deterministic_and_covariates_are_shared() {
    let a = gen_scenario(&spec(Scenario::I, 50, 0.7), &SeedStream::new(9)).unwrap().0;
    let b = gen_scenario(&spec(Scenario::I, 50, 0.7), &SeedStream::new(9)).unwrap().0;
    let c = gen_scenario(&spec(Scenario::II, 50, 0.7), &SeedStream::new(9)).unwrap().0;
    assert_eq!(a, b);
    assert_eq!(a.x(), c.x());
}

// Ordinary least squares of Y − S(X) on A·Xᵀβ_opt, without intercept.
#[test]
fn slope_recovers_xi() {
    let xi = 0.7;
    let s = ScenarioSpec { scenario: Scenario::I, n: 1_000_000, p: 8, xi };
    let (data, truth) = gen_scenario(&s, &SeedStream::new(11)).unwrap();
    let xs = data.x();
    let (mut szz, mut szy) = (0.0, 0.0);
    let z: Vec<f64> = (0..data.n())
        .map(|i| {
            let r = xs.row(i);
            data.a()[i].sign() * (r[0] + r[1] - r[2] - r[3])
        })
        .collect();
    for i in 0..data.n() {
        let y = data.y()[i] - truth.main_effect[i];
        szz += z[i] * z[i];
        szy += z[i] * y;
    }
    let slope = szy / szz;
    let rss: f64 = (0..data.n())
        .map(|i| (data.y()[i] - truth.main_effect[i] - slope * z[i]).powi(2))
        .sum();
    let se = (rss / (data.n() - 1) as f64 / szz).sqrt();
    assert!((slope - xi).abs() < 3.0 * se, "slope {slope}, se {se}");
}

#[test]
fn scenario_two_keeps_the_boundary() {
    let s = spec(Scenario::II, 2000, 0.4);
    let (data, truth) = gen_scenario(&s, &SeedStream::new(4)).unwrap();
    for (i, row) in data.x().rows().into_iter().enumerate() {
        let idx = row[0] + row[1] - row[2] - row[3];
        let v = row[0] + row[1] + row[2] + row[3];
        let tilde = 2.0 * v * v + 2.0 * s.xi;
        if tilde > 0.0 && idx != 0.0 {
            assert_eq!(truth.contrast[i].signum(), idx.signum());
        }
    }
}

#[test]
fn outcome_regression_is_half_difference() {
    let s = spec(Scenario::II, 10, 0.9);
    let x = Array1::from(vec![0.3, -1.2, 0.5, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let d = s.outcome(Arm::Plus, x.view()) - s.outcome(Arm::Minus, x.view());
    assert!((d - 2.0 * s.contrast(x.view())).abs() < 1e-12);
    let m = s.outcome(Arm::Plus, x.view()) + s.outcome(Arm::Minus, x.view());
    assert!((m - 2.0 * s.main_effect(x.view())).abs() < 1e-12);
}

#[test]
fn closed_form_matches_known_values() {
    let s = spec(Scenario::I, 10, 0.7);
    // optimal rule: E|Z|·ξ·‖β_opt‖ with ‖β_opt‖ = 2
    let best = closed_form_value(&s, &DecisionRule::new(beta_opt(10))).unwrap().unwrap();
    let expect = 0.7 * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((best - expect).abs() < 1e-12);
    // the all-zero rule treats everyone: E[Δ] = 0
    let zero = closed_form_value(&s, &DecisionRule::new(vec![0.0; 10])).unwrap().unwrap();
    assert_eq!(zero, 0.0);
    // a rule on a null coordinate alone is worth nothing
    let mut b = vec![0.0; 10];
    b[6] = 1.0;
    assert!(closed_form_value(&s, &DecisionRule::new(b)).unwrap().unwrap().abs() < 1e-15);
    assert_eq!(closed_form_value(&spec(Scenario::II, 10, 0.7), &DecisionRule::new(beta_opt(10))).unwrap(), None);
    assert!(closed_form_value(&s, &DecisionRule::new(vec![1.0; 9])).is_err());
}

#[test]
fn monte_carlo_oracle_agrees_with_closed_form() {
    let s = spec(Scenario::I, 10, 0.7);
    let mut b = beta_opt(10);
    b[5] = 0.8;
    b[1] = 0.3;
    let rules = vec![
        DecisionRule::new(beta_opt(10)),
        DecisionRule { beta: b, intercept: 0.4 },
    ];
    let mc = true_values(&s, &rules, 1_000_000, &SeedStream::new(5)).unwrap();
    assert!(mc[0].se <= 1e-3, "se {}", mc[0].se);
    for (rule, v) in rules.iter().zip(&mc) {
        let exact = closed_form_value(&s, rule).unwrap().unwrap();
        assert!((v.value - exact).abs() < 4.0 * v.se, "{} vs {exact}", v.value);
    }
}

#[test]
fn opposite_rules_sum_to_twice_the_mean_main_effect() {
    let s = spec(Scenario::II, 10, 0.6);
    let mut b = beta_opt(10);
    b[7] = -0.5;
    let rules = vec![
        DecisionRule { beta: b.clone(), intercept: 0.2 },
        DecisionRule { beta: b.iter().map(|v| -v).collect(), intercept: -0.2 },
    ];
    let v = true_values(&s, &rules, 200_000, &SeedStream::new(6)).unwrap();
    // ties have probability zero, so the contrast terms cancel draw by draw
    let gap = v[0].value + v[1].value - 2.0 * s.mean_main_effect();
    assert!(gap.abs() < 1e-9, "{v:?} gap {gap}");
}

// Rules sharing a tail direction must see the same tail draws: a rescaled
// rule makes identical decisions.
#[test]
fn common_draws_couple_rules_exactly() {
    let s = spec(Scenario::II, 10, 0.6);
    let mut b = beta_opt(10);
    b[5] = 0.7;
    b[8] = -1.1;
    let scaled: Vec<f64> = b.iter().map(|v| 3.0 * v).collect();
    let mut other = b.clone();
    other[9] = 2.0;
    let rules = vec![
        DecisionRule { beta: b, intercept: 0.3 },
        DecisionRule { beta: other, intercept: 0.0 },
        DecisionRule { beta: scaled, intercept: 0.9 },
    ];
    let v = true_values(&s, &rules, 50_000, &SeedStream::new(2)).unwrap();
    assert!((v[0].value - v[2].value).abs() < 1e-12, "{v:?}");
}

#[test]
fn tail_basis_preserves_inner_products() {
    let mut rules = Vec::new();
    for k in 0..4 {
        let beta: Vec<f64> = (0..10).map(|l| ((l * 7 + k * 3) % 5) as f64 - 2.0).collect();
        rules.push(DecisionRule::new(beta));
    }
    let c = oracle::tail_coordinates(&rules);
    for a in 0..4 {
        for b in 0..4 {
            let direct: f64 = rules[a].beta[4..].iter().zip(&rules[b].beta[4..]).map(|(x, y)| x * y).sum();
            let coords: f64 = c[a].iter().zip(&c[b]).map(|(x, y)| x * y).sum();
            assert!((direct - coords).abs() < 1e-10);
        }
    }
}

#[test]
fn optimal_rule_beats_perturbations_in_scenario_two() {
    let s = spec(Scenario::II, 10, 0.8);
    let mut off = beta_opt(10);
    off[0] = 0.2;
    off[4] = 1.0;
    let rules = vec![DecisionRule::new(beta_opt(10)), DecisionRule::new(off)];
    let v = true_values(&s, &rules, 200_000, &SeedStream::new(8)).unwrap();
    assert!(v[0].value > v[1].value);
}

#[test]
fn oracle_rejects_bad_input() {
    let s = spec(Scenario::I, 10, 0.7);
    assert!(true_value_oracle(&s, &DecisionRule::new(beta_opt(10)), 1, &SeedStream::new(1)).is_err());
    assert!(true_value_oracle(&s, &DecisionRule::new(beta_opt(8)), 100, &SeedStream::new(1)).is_err());
}

#[test]
fn baseline_design_layout() {
    let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
    let z = baseline::q_design(x.view(), &[1.0, -1.0]);
    assert_eq!(z, ndarray::array![[1.0, 1.0, 2.0, 1.0, 1.0, 2.0], [1.0, 3.0, 4.0, -1.0, -3.0, -4.0]]);
}

#[test]
fn baseline_without_interactions_has_small_coefficients() {
    let s = ScenarioSpec { scenario: Scenario::I, n: 600, p: 10, xi: 0.0 };
    let (data, _) = gen_scenario(&s, &SeedStream::new(12)).unwrap();
    let fit = baseline_q(&data, &BaselineOptions::default(), &SeedStream::new(1)).unwrap();
    assert_eq!(fit.coef.len(), 22);
    assert!(fit.rule.beta.iter().all(|b| b.abs() < 0.1), "{:?}", fit.rule.beta);
    assert!(fit.rule.intercept.abs() < 0.1);
    // main effects are still picked up
    assert!((fit.coef[1] + 0.4).abs() < 0.1);
}

#[test]
fn baseline_recovers_the_linear_contrast() {
    let s = ScenarioSpec { scenario: Scenario::I, n: 800, p: 10, xi: 0.7 };
    let (data, _) = gen_scenario(&s, &SeedStream::new(13)).unwrap();
    let fit = baseline_q(&data, &BaselineOptions::default(), &SeedStream::new(1)).unwrap();
    let target = beta_opt(10);
    for j in 0..4 {
        assert!((fit.rule.beta[j] - 0.7 * target[j]).abs() < 0.15, "{:?}", fit.rule.beta);
    }
}

fn record(rep: usize, p_values: &[f64], covered: bool) -> ReplicationRecord {
    ReplicationRecord {
        rep,
        methods: vec![MethodRecord {
            method: Method::Pearl,
            error: None,
            beta: vec![],
            intercept: 0.0,
            tests: p_values
                .iter()
                .enumerate()
                .map(|(k, &p)| CoordinateRecord {
                    coordinate: k + 1,
                    estimate: 0.0,
                    one_step: 0.0,
                    se: 1.0,
                    z_signed: 0.0,
                    p_value: p,
                    ci_lo: -1.0,
                    ci_hi: 1.0,
                    target: Some(0.0),
                    covered: Some(covered),
                })
                .collect(),
            achieved_value: Some(rep as f64),
            value_ci: None,
        }],
    }
}

#[test]
fn aggregate_all_rejections() {
    let recs: Vec<_> = (0..100).map(|r| record(r, &[0.01], true)).collect();
    let m = aggregate(&recs, 0.05).unwrap();
    let c = &m.methods[0].coordinates[0];
    assert_eq!(c.rejection_rate, 1.0);
    assert_eq!(c.rejection_se, 0.0);
    assert_eq!(c.coverage, Some(1.0));
    assert_eq!(m.methods[0].mean_achieved_value, Some(49.5));
}

#[test]
fn aggregate_binomial_standard_error() {
    let recs: Vec<_> = (0..200).map(|r| record(r, &[if r < 10 { 0.001 } else { 0.5 }], r % 2 == 0)).collect();
    let m = aggregate(&recs, 0.05).unwrap();
    let c = &m.methods[0].coordinates[0];
    assert_eq!(c.count, 200);
    assert!((c.rejection_rate - 0.05).abs() < 1e-15);
    assert!((c.rejection_se - 0.0154).abs() < 1e-4);
    assert!((c.rejection_se - (0.05f64 * 0.95 / 200.0).sqrt()).abs() < 1e-15);
    assert_eq!(c.coverage, Some(0.5));
}

#[test]
fn aggregate_counts_failures_and_ignores_order() {
    let mut recs: Vec<_> = (0..10).map(|r| record(r, &[0.2, 0.01], true)).collect();
    recs[3].methods[0] = MethodRecord::failed(Method::Pearl, "boom");
    let m = aggregate(&recs, 0.05).unwrap();
    recs.reverse();
    assert_eq!(aggregate(&recs, 0.05).unwrap(), m);
    assert_eq!(m.methods[0].failures, 1);
    assert_eq!(m.methods[0].successes, 9);
    assert_eq!(m.methods[0].coordinates[1].rejection_rate, 1.0);
    assert_eq!(m.methods[0].coordinates[0].rejection_rate, 0.0);
}

#[test]
fn aggregate_requires_a_success() {
    let recs = vec![ReplicationRecord {
        rep: 0,
        methods: vec![MethodRecord::failed(Method::BaselineQ, "x")],
    }];
    assert!(aggregate(&recs, 0.05).is_err());
    assert!(aggregate(&[], 0.05).is_err());
}

proptest! {
    #[test]
    fn aggregate_rates_are_probabilities(ps in prop::collection::vec(0.0f64..1.0, 1..60)) {
        let recs: Vec<_> = ps.iter().enumerate().map(|(r, &p)| record(r, &[p], p > 0.5)).collect();
        let m = aggregate(&recs, 0.05).unwrap();
        let c = &m.methods[0].coordinates[0];
        prop_assert!((0.0..=1.0).contains(&c.rejection_rate));
        prop_assert!((0.0..=1.0).contains(&c.coverage.unwrap()));
        prop_assert!((c.rejection_se - rate_se(c.rejection_rate, ps.len())).abs() < 1e-15);
    }
}

fn small_config() -> McConfig {
    let mut pearl = PearlConfig::default();
    pearl.nuisance.propensity = PropensityKind::L1Logistic;
    pearl.nuisance.outcome = OutcomeKind::L1Linear;
    McConfig {
        scenario: ScenarioSpec { scenario: Scenario::I, n: 200, p: 10, xi: 0.7 },
        reps: 2,
        pearl,
        coordinates: vec![1, 6],
        oracle_draws: 10_000,
        reference_n: 0,
        seed: 21,
        ..McConfig::default()
    }
}

#[test]
fn replication_record_schema_and_determinism() {
    let cfg = small_config();
    let refs = References::new();
    let a = run_replication(1, &cfg, &refs).unwrap();
    let b = run_replication(1, &cfg, &refs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.methods.len(), 2);
    for m in &a.methods {
        assert!(m.ok(), "{:?}", m.error);
        assert_eq!(m.tests.iter().map(|t| t.coordinate).collect::<Vec<_>>(), vec![1, 6]);
        assert!(m.achieved_value.is_some());
        assert_eq!(m.beta.len(), 10);
        // null coordinate targets default to zero, signal coordinates have none
        assert_eq!(m.tests[0].target, None);
        assert_eq!(m.tests[1].target, Some(0.0));
    }
    let pearl = &a.methods[0];
    let ci = pearl.value_ci.as_ref().unwrap();
    assert!(ci.ci_lo <= ci.value && ci.value <= ci.ci_hi);
    assert!(a.methods[1].value_ci.is_none());
}

#[test]
fn study_is_order_independent() {
    let cfg = small_config();
    let s = run_study(&cfg).unwrap();
    assert_eq!(s.records.len(), 2);
    let again = run_replication(1, &cfg, &s.references).unwrap();
    assert_eq!(s.records[1], again);
    assert_eq!(s.metrics.reps, 2);
}

#[test]
fn failing_method_does_not_stop_the_study() {
    let mut cfg = small_config();
    cfg.coordinates = vec![5];
    cfg.value_inference = false;
    // the kernel outcome model refuses arms smaller than this
    cfg.pearl.nuisance.outcome = OutcomeKind::ScreenKernel;
    cfg.pearl.nuisance.min_arm_size = 1_000_000;
    let s = run_study(&cfg).unwrap();
    let pearl = s.metrics.methods.iter().find(|m| m.method == Method::Pearl).unwrap();
    let base = s.metrics.methods.iter().find(|m| m.method == Method::BaselineQ).unwrap();
    assert_eq!((pearl.failures, pearl.successes), (2, 0));
    assert_eq!((base.failures, base.successes), (0, 2));
    assert!(s.records[0].methods[0].error.is_some());
}

#[test]
fn config_validation_and_serde() {
    let cfg = McConfig::default();
    assert!(cfg.validate().is_ok());
    assert!(McConfig { reps: 0, ..McConfig::default() }.validate().is_err());
    assert!(McConfig { coordinates: vec![0], ..McConfig::default() }.validate().is_err());
    assert!(McConfig { coordinates: vec![101], ..McConfig::default() }.validate().is_err());
    assert!(McConfig { methods: vec![], ..McConfig::default() }.validate().is_err());
    let json = serde_json::to_string(&cfg).unwrap();
    let back: McConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let partial: McConfig = serde_json::from_str(r#"{"reps": 3, "methods": ["baseline-q"]}"#).unwrap();
    assert_eq!(partial.reps, 3);
    assert_eq!(partial.methods, vec![Method::BaselineQ]);
    assert!(serde_json::from_str::<McConfig>(r#"{"bogus": 1}"#).is_err());
    assert_eq!("baseline-q".parse::<Method>().unwrap(), Method::BaselineQ);
}

#[test]
fn reference_fit_for_the_baseline_is_the_interaction_vector() {
    let cfg = McConfig {
        scenario: ScenarioSpec { scenario: Scenario::I, n: 200, p: 8, xi: 0.7 },
        reference_n: 50_000,
        ..McConfig::default()
    };
    let r = reference_coefficients(&cfg, Method::BaselineQ).unwrap();
    let target = beta_opt(8);
    for j in 0..8 {
        assert!((r[j] - 0.7 * target[j]).abs() < 0.02, "{r:?}");
    }
}
