//! Nadaraya–Watson regression with a Gaussian product kernel.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    /// `1.06 σ̂ m^{-1/5}` per dimension.
    #[default]
    Silverman,
    /// `σ̂ m^{-1/(d+4)}` per dimension.
    Scott,
}

/// Multipliers tried by the leave-one-out refinement: `0.5 · √2^k`. The
/// largest ones approach a global mean, which is what a weak signal in many
/// screened dimensions calls for.
fn cv_multipliers() -> impl Iterator<Item = f64> {
    (0..15).map(|k| 0.5 * 2f64.powf(k as f64 / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRegression {
    columns: Vec<usize>,
    /// Training points restricted to `columns`, row-major.
    train: Vec<f64>,
    y: Vec<f64>,
    bandwidth: Vec<f64>,
    y_min: f64,
    y_max: f64,
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / m;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

impl KernelRegression {
    /// Fits on the given columns of `x`. With `cv_refine` the rule-of-thumb
    /// bandwidths are rescaled by the leave-one-out best common multiplier.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        columns: &[usize],
        rule: BandwidthRule,
        cv_refine: bool,
    ) -> Result<Self> {
        let m = x.nrows();
        if m == 0 || y.len() != m {
            return Err(Error::validation("kernel regression needs aligned, nonempty data"));
        }
        if let Some(&bad) = columns.iter().find(|&&j| j >= x.ncols()) {
            return Err(Error::validation(format!("column {bad} out of range")));
        }
        let d = columns.len();
        let mut train = Vec::with_capacity(m * d);
        for i in 0..m {
            for &j in columns {
                train.push(x[[i, j]]);
            }
        }
        let factor = match rule {
            BandwidthRule::Silverman => 1.06 * (m as f64).powf(-0.2),
            BandwidthRule::Scott => (m as f64).powf(-1.0 / (d as f64 + 4.0)),
        };
        let bandwidth = columns
            .iter()
            .map(|&j| {
                let sd = sample_sd(&x.column(j).to_vec());
                if sd > 0.0 {
                    factor * sd
                } else {
                    1.0
                }
            })
            .collect();
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut model = KernelRegression {
            columns: columns.to_vec(),
            train,
            y: y.to_vec(),
            bandwidth,
            y_min,
            y_max,
        };
        if cv_refine && d > 0 && m > 2 {
            let base = model.bandwidth.clone();
            let mut best = (f64::INFINITY, 1.0);
            for c in cv_multipliers() {
                model.bandwidth = base.iter().map(|h| h * c).collect();
                let err = model.loo_error();
                if err < best.0 {
                    best = (err, c);
                }
            }
            model.bandwidth = base.iter().map(|h| h * best.1).collect();
        }
        Ok(model)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    fn log_weight(&self, point: &[f64], i: usize) -> f64 {
        let d = self.columns.len();
        let row = &self.train[i * d..(i + 1) * d];
        let mut s = 0.0;
        for k in 0..d {
            let u = (point[k] - row[k]) / self.bandwidth[k];
            s += u * u;
        }
        -0.5 * s
    }

    /// Weighted mean of responses, skipping `skip` if given.
    fn smooth(&self, point: &[f64], skip: Option<usize>) -> f64 {
        let m = self.y.len();
        let logw: Vec<f64> = (0..m)
            .map(|i| {
                if Some(i) == skip {
                    f64::NEG_INFINITY
                } else {
                    self.log_weight(point, i)
                }
            })
            .collect();
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return self.y.iter().sum::<f64>() / m as f64;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, y) in logw.iter().zip(&self.y) {
            let w = (w - top).exp();
            num += w * y;
            den += w;
        }
        (num / den).clamp(self.y_min, self.y_max)
    }

    fn loo_error(&self) -> f64 {
        let d = self.columns.len();
        let m = self.y.len();
        (0..m)
            .map(|i| {
                let point = &self.train[i * d..(i + 1) * d];
                (self.smooth(point, Some(i)) - self.y[i]).powi(2)
            })
            .sum::<f64>()
            / m as f64
    }

    /// Prediction at a full covariate vector (all `p` columns).
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> f64 {
        let point: Vec<f64> = self.columns.iter().map(|&j| x[j]).collect();
        self.smooth(&point, None)
    }
}
