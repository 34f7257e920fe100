//! The four subcommands. Each returns the files it wrote (or the text for
//! stdout) and never prints on its own.

use std::io::Write;
use std::path::{Path, PathBuf};

use pearl_core::data::{load_dataset, write_dataset, Dataset};
use pearl_core::inference::test_coordinates;
use pearl_core::nuisance::KnownNuisance;
use pearl_core::pearl::fit_all;
use pearl_core::seed::SeedStream;
use pearl_core::simulation::{run_study, CoordinateMetrics};
use pearl_core::value::infer_value;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::failure::Failure;

/// Where a command's main product goes.
pub enum Sink {
    Stdout(String),
    Files(Vec<PathBuf>),
}

fn load(cfg: &RunConfig) -> Result<Dataset, Failure> {
    Ok(load_dataset(cfg.input()?, &cfg.columns)?)
}

/// `fit.csv` → `fit.json`; a `.json` output gets `.meta.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("meta.json")
    } else {
        path.with_extension("json")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut f = std::fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    f.write_all(bytes).map_err(|e| Failure::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn json_sink(cfg: &RunConfig, body: String) -> Result<Sink, Failure> {
    match &cfg.output {
        Some(path) => {
            write_file(path, body.as_bytes())?;
            Ok(Sink::Files(vec![path.clone()]))
        }
        None => Ok(Sink::Stdout(body)),
    }
}

fn csv_text<F>(build: F) -> Result<String, Failure>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w).map_err(|e| Failure::validation(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Failure::validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Pooled and per-fold coefficients as CSV, plus a JSON sidecar with the
/// effective config and each fold's penalty.
pub fn fit(cfg: &RunConfig) -> Result<Sink, Failure> {
    let data = load(cfg)?;
    let fit = fit_all(&data, &cfg.pearl, &KnownNuisance::default(), &SeedStream::new(cfg.seed))?;
    let table = csv_text(|w| {
        let mut header = vec!["coef_index".to_string(), "name".into(), "pooled".into()];
        header.extend((1..=fit.k()).map(|k| format!("fold_{k}")));
        w.write_record(&header)?;
        for j in 0..data.p() {
            let mut row = vec![(j + 1).to_string(), data.column_name(j), num(fit.pooled[j])];
            row.extend(fit.fits.iter().map(|f| num(f.beta[j])));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    let meta = json!({
        "config": cfg,
        "n": data.n(),
        "p": data.p(),
        "folds": fit.fits.iter().enumerate().map(|(k, f)| json!({
            "fold": k + 1,
            "size": f.rows.len(),
            "lambda": f.lambda,
        })).collect::<Vec<_>>(),
    });
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("fit.csv"));
    let side = sidecar(&out);
    write_file(&out, table.as_bytes())?;
    write_file(&side, pretty(&meta).as_bytes())?;
    Ok(Sink::Files(vec![out, side]))
}

pub fn test(cfg: &RunConfig) -> Result<Sink, Failure> {
    let data = load(cfg)?;
    let coords: Vec<usize> = cfg.test_coordinates();
    if coords.is_empty() {
        return Err(Failure::validation("no coordinates requested"));
    }
    if let Some(&j) = coords.iter().find(|&&j| j == 0 || j > data.p()) {
        return Err(Failure::validation(format!("coordinate {j} out of range 1..={}", data.p())));
    }
    let zero_based: Vec<usize> = coords.iter().map(|j| j - 1).collect();
    let (_, reports) = test_coordinates(
        &data,
        &zero_based,
        &cfg.pearl,
        &cfg.inference,
        &KnownNuisance::default(),
        &SeedStream::new(cfg.seed),
    )?;
    json_sink(cfg, pretty(&json!({ "config": cfg, "reports": reports })))
}

pub fn value(cfg: &RunConfig) -> Result<Sink, Failure> {
    let data = load(cfg)?;
    let report = infer_value(
        &data,
        &cfg.pearl,
        &cfg.value,
        &KnownNuisance::default(),
        &SeedStream::new(cfg.seed),
    )?;
    json_sink(cfg, pretty(&json!({ "config": cfg, "report": report })))
}

#[derive(Serialize)]
struct MetricRow<'a> {
    method: &'a str,
    coordinate: usize,
    count: usize,
    rejection_rate: f64,
    rejection_se: f64,
    coverage: Option<f64>,
    coverage_se: Option<f64>,
    target: Option<f64>,
    mean_estimate: f64,
    mean_one_step: f64,
    mean_se: f64,
}

impl<'a> From<&'a CoordinateMetrics> for MetricRow<'a> {
    fn from(c: &'a CoordinateMetrics) -> Self {
        MetricRow {
            method: c.method.name(),
            coordinate: c.coordinate,
            count: c.count,
            rejection_rate: c.rejection_rate,
            rejection_se: c.rejection_se,
            coverage: c.coverage,
            coverage_se: c.coverage_se,
            target: c.target,
            mean_estimate: c.mean_estimate,
            mean_one_step: c.mean_one_step,
            mean_se: c.mean_se,
        }
    }
}

/// Per-coordinate metrics as CSV and a JSON summary with everything else.
pub fn simulate(cfg: &RunConfig) -> Result<Sink, Failure> {
    let study = cfg.study();
    let result = run_study(&study)?;
    let table = csv_text(|w| {
        for m in &result.metrics.methods {
            for c in &m.coordinates {
                w.serialize(MetricRow::from(c))?;
            }
        }
        Ok(())
    })?;
    let table = if table.is_empty() {
        // no tests were requested; keep the header
        csv_text(|w| {
            w.write_record([
                "method",
                "coordinate",
                "count",
                "rejection_rate",
                "rejection_se",
                "coverage",
                "coverage_se",
                "target",
                "mean_estimate",
                "mean_one_step",
                "mean_se",
            ])
        })?
    } else {
        table
    };
    let summary = json!({
        "config": cfg,
        "references": result.references.iter().map(|(m, b)| (m.name(), b)).collect::<std::collections::BTreeMap<_, _>>(),
        "metrics": result.metrics,
    });
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("simulation.csv"));
    let side = sidecar(&out);
    write_file(&out, table.as_bytes())?;
    write_file(&side, pretty(&summary).as_bytes())?;
    let mut written = vec![out, side];
    if let Some(dir) = &cfg.simulation.dump {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        for r in 0..study.reps {
            let path = dir.join(format!("data_{:04}.csv", r + 1));
            write_dataset(&path, &study.replication_data(r)?)?;
            written.push(path);
        }
        let path = dir.join("records.json");
        write_file(&path, pretty(&result.records).as_bytes())?;
        written.push(path);
    }
    Ok(Sink::Files(written))
}
