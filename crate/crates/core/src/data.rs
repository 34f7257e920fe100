//! Observational datasets, CSV loading, fold plans and sample splits.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;

/// Treatment arm, canonically coded as +1 / -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Plus,
    Minus,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Plus, Arm::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Arm::Plus => 1.0,
            Arm::Minus => -1.0,
        }
    }

    /// `sgn(t)` with `sgn(0) = +1`.
    pub fn from_score(t: f64) -> Arm {
        if t >= 0.0 {
            Arm::Plus
        } else {
            Arm::Minus
        }
    }

    pub fn flip(self) -> Arm {
        match self {
            Arm::Plus => Arm::Minus,
            Arm::Minus => Arm::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: ArrayView1<'a, f64>,
    pub a: Arm,
    pub y: f64,
}

/// `n` observations of covariates, treatment and outcome. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    a: Vec<Arm>,
    y: Vec<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, a: Vec<Arm>, y: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::validation("dataset must contain at least one observation"));
        }
        if a.len() != n || y.len() != n {
            return Err(Error::validation(format!(
                "length mismatch: {} covariate rows, {} treatments, {} outcomes",
                n,
                a.len(),
                y.len()
            )));
        }
        for (i, row) in x.outer_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    column: Some(format!("x{}", j + 1)),
                    message: "non-finite covariate".into(),
                });
            }
            if !y[i].is_finite() {
                return Err(Error::Row {
                    row: i + 1,
                    column: None,
                    message: "non-finite outcome".into(),
                });
            }
        }
        Ok(Dataset {
            x,
            a,
            y,
            column_names: None,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::validation(format!(
                "{} column names for {} covariates",
                names.len(),
                self.p()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn a(&self) -> &[Arm] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn column_name(&self, j: usize) -> String {
        match &self.column_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation {
            x: self.x.row(i),
            a: self.a[i],
            y: self.y[i],
        }
    }

    pub fn count(&self, arm: Arm) -> usize {
        self.a.iter().filter(|&&a| a == arm).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            column_names: self.column_names.clone(),
        }
    }

    pub fn swap_columns(&self, i: usize, j: usize) -> Dataset {
        let mut out = self.clone();
        if i != j {
            let (ci, cj) = (self.x.column(i).to_owned(), self.x.column(j).to_owned());
            out.x.column_mut(i).assign(&cj);
            out.x.column_mut(j).assign(&ci);
            if let Some(names) = out.column_names.as_mut() {
                names.swap(i, j);
            }
        }
        out
    }

    /// Same dataset with outcomes replaced.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Dataset> {
        let mut d = Dataset::new(self.x.clone(), self.a.clone(), y)?;
        d.column_names = self.column_names.clone();
        Ok(d)
    }

    /// Same dataset with every covariate negated.
    pub fn negated(&self) -> Dataset {
        let mut out = self.clone();
        out.x.mapv_inplace(|v| -v);
        out
    }
}

/// How CSV columns map onto (y, a, x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSpec {
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns in order; `None` takes every other column.
    pub covariates: Option<Vec<String>>,
    /// Cell values coding the +1 arm.
    pub treated_values: Vec<String>,
    /// Cell values coding the -1 arm.
    pub control_values: Vec<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: None,
            treated_values: vec!["1".into()],
            control_values: vec!["-1".into()],
        }
    }
}

impl ColumnSpec {
    fn code(&self, cell: &str) -> Option<Arm> {
        let cell = cell.trim();
        let matches = |coding: &[String]| {
            coding.iter().any(|v| {
                let v = v.trim();
                v == cell
                    || matches!((v.parse::<f64>(), cell.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
            })
        };
        if matches(&self.treated_values) {
            Some(Arm::Plus)
        } else if matches(&self.control_values) {
            Some(Arm::Minus)
        } else {
            None
        }
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Row {
        row,
        column: Some(column.to_string()),
        message: format!("cannot parse '{raw}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            column: Some(column.to_string()),
            message: format!("non-finite value '{raw}'"),
        });
    }
    Ok(v)
}

pub fn load_dataset(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("column '{name}' not found in header")))
    };
    let y_col = find(&spec.outcome)?;
    let a_col = find(&spec.treatment)?;
    let x_names: Vec<String> = match &spec.covariates {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_col && *i != a_col)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if x_names.is_empty() {
        return Err(Error::validation("no covariate columns"));
    }
    let x_cols = x_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let p = x_cols.len();
    let mut xs = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Row {
            row,
            column: None,
            message: format!("malformed row: {e}"),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Row {
                row,
                column: None,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        y.push(parse_cell(&record[y_col], row, &spec.outcome)?);
        let cell = &record[a_col];
        a.push(spec.code(cell).ok_or_else(|| Error::Row {
            row,
            column: Some(spec.treatment.clone()),
            message: format!("treatment value '{cell}' is outside the declared coding"),
        })?);
        for (&c, name) in x_cols.iter().zip(&x_names) {
            xs.push(parse_cell(&record[c], row, name)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::validation(format!("{}: no data rows", path.display())));
    }
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major buffer has n*p entries");
    Dataset::new(x, a, y)?.with_column_names(x_names)
}

/// Writes `y,a,<covariates>` with the treatment coded as 1 / -1.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((0..data.p()).map(|j| data.column_name(j)));
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let obs = data.observation(i);
        let mut rec = vec![format!("{}", obs.y), format!("{}", obs.a.sign() as i32)];
        rec.extend(obs.x.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// Random partition of `0..n` into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    assignments: Vec<usize>,
    k: usize,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Zero-based fold of every observation.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == k).collect()
    }

    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn make_folds(n: usize, k: usize, seed: &SeedStream) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::validation(format!(
            "fold count must satisfy 2 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan { assignments, k })
}

/// Random two-way split; the first set has `round(fraction * n)` members.
/// Both index sets are returned sorted.
pub fn split_half(n: usize, fraction: f64, seed: &SeedStream) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n1 = (fraction * n as f64).round() as usize;
    if n1 == 0 || n1 >= n {
        return Err(Error::validation(format!(
            "degenerate split: {n1} of {n} observations in the first set"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    let mut first = order[..n1].to_vec();
    let mut second = order[n1..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}
