use std::path::Path;
use std::process::{Command, Output};

use pearl_core::data::write_dataset;
use pearl_core::seed::SeedStream;
use pearl_core::simulation::{gen_scenario, Scenario, ScenarioSpec};
use serde_json::Value;

const FAST: [&str; 4] = ["--propensity", "l1-logistic", "--outcome-model", "l1-linear"];

fn pearl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pearl"))
        .args(args)
        .current_dir(dir)
        .env_remove("PEARL_CONFIG")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_of(out: &Output) -> (i32, Value) {
    let v: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    (out.status.code().unwrap(), v["error"].clone())
}

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(FAST);
    v
}

/// Scenario I data with `p` covariates written to `dir/data.csv`.
fn scenario_csv(dir: &Path, n: usize, p: usize) {
    let spec = ScenarioSpec { scenario: Scenario::I, n, p, xi: 0.7 };
    let (data, _) = gen_scenario(&spec, &SeedStream::new(77)).unwrap();
    write_dataset(&dir.join("data.csv"), &data).unwrap();
}

#[test]
fn fit_writes_one_row_per_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    scenario_csv(dir.path(), 160, 8);
    let args = with_fast(&["fit", "-i", "data.csv", "--covariates", "x1,x2", "--folds", "3"]);
    ok(&pearl(dir.path(), &args));
    let text = std::fs::read_to_string(dir.path().join("fit.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "coef_index,name,pooled,fold_1,fold_2,fold_3");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,x1,"));
    assert!(lines[2].starts_with("2,x2,"));
    // pooled is the mean of the folds
    let row: Vec<f64> = lines[1].split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert!((row[0] - (row[1] + row[2] + row[3]) / 3.0).abs() < 1e-12);

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(meta["p"], 2);
    assert_eq!(meta["folds"].as_array().unwrap().len(), 3);
    assert_eq!(meta["config"]["pearl"]["folds"], 3);
}

#[test]
fn fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    scenario_csv(dir.path(), 120, 8);
    let run = |out: &'static str| {
        ok(&pearl(dir.path(), &["fit", "-i", "data.csv", "-o", out, "--seed", "5"]));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    assert_eq!(a, b);
}

#[test]
fn error_taxonomy_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = error_of(&pearl(dir.path(), &["fit", "-i", "missing.csv"]));
    assert_eq!((code, err["kind"].as_str().unwrap()), (2, "io"));

    let (code, err) = error_of(&pearl(dir.path(), &["fit"]));
    assert_eq!((code, err["kind"].as_str().unwrap()), (3, "validation"));

    let (code, _) = error_of(&pearl(dir.path(), &["test", "--no-such-flag"]));
    assert_eq!(code, 3);

    let (code, err) = error_of(&pearl(dir.path(), &["fit", "--config", "nope.json"]));
    assert_eq!((code, err["kind"].as_str().unwrap()), (2, "io"));

    std::fs::write(dir.path().join("bad.json"), "{\"sed\": 3}").unwrap();
    let (code, _) = error_of(&pearl(dir.path(), &["fit", "--config", "bad.json"]));
    assert_eq!(code, 3);

    scenario_csv(dir.path(), 60, 8);
    let (code, err) = error_of(&pearl(dir.path(), &["test", "-i", "data.csv", "--coordinates", "9"]));
    assert_eq!(code, 3, "{err}");

    // the known backends need a closed form, which data files do not carry
    let (code, _) = error_of(&pearl(dir.path(), &["fit", "-i", "data.csv", "--propensity", "known"]));
    assert_eq!(code, 3);
}

#[test]
fn test_reports_one_entry_per_coordinate() {
    let dir = tempfile::tempdir().unwrap();
    scenario_csv(dir.path(), 300, 10);
    let out = ok(&pearl(dir.path(), &with_fast(&["test", "-i", "data.csv", "--coordinates", "1,5"])));
    let v: Value = serde_json::from_str(&out).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["coordinate"], 1);
    assert_eq!(reports[1]["coordinate"], 5);
    for r in reports {
        let p = r["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(r["ci_lo"].as_f64().unwrap() <= r["ci_hi"].as_f64().unwrap());
    }
    assert!(reports[0]["p_value"].as_f64().unwrap() < 0.01);
    assert_eq!(v["config"]["coordinates"], serde_json::json!([1, 5]));
}

#[test]
fn value_interval_echoes_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    scenario_csv(dir.path(), 300, 10);
    let args = with_fast(&["value", "-i", "data.csv", "--seed", "3"]);
    let first = ok(&pearl(dir.path(), &args));
    let second = ok(&pearl(dir.path(), &args));
    assert_eq!(first, second);
    let v: Value = serde_json::from_str(&first).unwrap();
    let r = &v["report"];
    let (value, se) = (r["value"].as_f64().unwrap(), r["se"].as_f64().unwrap());
    assert_eq!(r["ci_lo"].as_f64().unwrap(), value - 1.96 * se);
    assert_eq!(r["ci_hi"].as_f64().unwrap(), value + 1.96 * se);
    assert_eq!(r["n_eval"], 150);
    assert_eq!(v["config"]["value"]["fit_fraction"], 0.5);

    let other = ok(&pearl(dir.path(), &with_fast(&["value", "-i", "data.csv", "--fit-fraction", "0.6"])));
    let v: Value = serde_json::from_str(&other).unwrap();
    assert_eq!(v["report"]["n_eval"], 120);
}

#[test]
fn config_file_flags_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(&pearl(dir.path(), &["fit", "--print-config", "--folds", "4", "--seed", "9"]));
    std::fs::write(dir.path().join("run.json"), &printed).unwrap();

    // the printed config reproduces itself
    let again = ok(&pearl(dir.path(), &["fit", "--print-config", "--config", "run.json"]));
    assert_eq!(printed, again);

    // flags beat the file
    let over = ok(&pearl(dir.path(), &["fit", "--print-config", "--config", "run.json", "--folds", "6"]));
    let v: Value = serde_json::from_str(&over).unwrap();
    assert_eq!(v["pearl"]["folds"], 6);
    assert_eq!(v["seed"], 9);

    // the environment supplies the path when --config is absent
    let env = Command::new(env!("CARGO_BIN_EXE_pearl"))
        .args(["fit", "--print-config"])
        .current_dir(dir.path())
        .env("PEARL_CONFIG", "run.json")
        .output()
        .unwrap();
    assert_eq!(ok(&env), printed);

    // a partial file keeps the defaults for everything else
    std::fs::write(dir.path().join("partial.json"), r#"{"simulation": {"reps": 7}}"#).unwrap();
    let v: Value = serde_json::from_str(&ok(&pearl(
        dir.path(),
        &["simulate", "--print-config", "--config", "partial.json"],
    )))
    .unwrap();
    assert_eq!(v["simulation"]["reps"], 7);
    assert_eq!(v["simulation"]["scenario"]["p"], 100);
}

#[test]
fn simulate_schema_and_single_replication() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_fast(&[
        "simulate",
        "--scenario",
        "1",
        "--n",
        "200",
        "--p",
        "10",
        "--xi",
        "0.7",
        "--reps",
        "1",
        "--oracle-draws",
        "10000",
        "--reference-n",
        "0",
    ]);
    ok(&pearl(dir.path(), &args));
    let mut rdr = csv::Reader::from_path(dir.path().join("simulation.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let se_col = headers.iter().position(|h| h == "rejection_se").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 16);
    for row in &rows {
        assert_eq!(row[se_col].parse::<f64>().unwrap(), 0.0);
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulation.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["reps"], 1);
    assert_eq!(summary["config"]["simulation"]["scenario"]["scenario"], "I");
}

#[test]
fn dumped_data_round_trips_through_test() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_fast(&[
        "simulate",
        "--n",
        "300",
        "--p",
        "10",
        "--reps",
        "2",
        "--methods",
        "pearl",
        "--coordinates",
        "1,6",
        "--no-achieved-value",
        "--no-value-inference",
        "--reference-n",
        "0",
        "--dump",
        "dump",
    ]);
    ok(&pearl(dir.path(), &args));
    let records: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dump/records.json")).unwrap()).unwrap();
    for r in 0..2 {
        let file = format!("dump/data_{:04}.csv", r + 1);
        let out = ok(&pearl(dir.path(), &with_fast(&["test", "-i", &file, "--coordinates", "1,6"])));
        let v: Value = serde_json::from_str(&out).unwrap();
        let cli_p = v["reports"][0]["p_value"].as_f64().unwrap();
        let lib_p = records[r]["methods"][0]["tests"][0]["p_value"].as_f64().unwrap();
        // different fold seeds, same data: the signal coordinate is rejected by both
        assert!(cli_p < 0.05 && lib_p < 0.05, "{cli_p} {lib_p}");
        let est_cli = v["reports"][0]["estimate"].as_f64().unwrap();
        let est_lib = records[r]["methods"][0]["tests"][0]["estimate"].as_f64().unwrap();
        assert!((est_cli - est_lib).abs() < 0.5, "{est_cli} {est_lib}");
    }
}
