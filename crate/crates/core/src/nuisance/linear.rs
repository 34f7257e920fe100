//! L1-penalized linear and logistic fits on standardized features with an
//! unpenalized intercept.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::Result;
use crate::seed::SeedStream;
use crate::solver::{tune, LambdaPath, LambdaPolicy, SolverOptions, SubsetLoss};

/// `intercept + xᵀcoef` on the original covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
}

impl LinearPredictor {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Fits `loss` against `[1, standardized x]` with λ chosen by `policy`.
/// Constant columns get a zero coefficient.
pub(crate) fn fit_penalized<L: SubsetLoss>(
    x: ArrayView2<'_, f64>,
    loss: &L,
    policy: LambdaPolicy,
    path: &LambdaPath,
    seed: &SeedStream,
) -> Result<LinearPredictor> {
    let (m, p) = x.dim();
    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let col = x.column(j);
        let mu = col.sum() / m as f64;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64;
        mean[j] = mu;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let z = Array2::from_shape_fn((m, p + 1), |(i, j)| {
        if j == 0 {
            1.0
        } else {
            (x[[i, j - 1]] - mean[j - 1]) / scale[j - 1]
        }
    });
    let mut pen = vec![1.0; p + 1];
    pen[0] = 0.0;
    let opts = SolverOptions {
        penalty_factors: Some(pen),
        ..SolverOptions::default()
    };
    let tuned = tune(z.view(), loss, policy, path, &opts, seed)?;
    let b = &tuned.fit.coefficients;
    let coef: Vec<f64> = (0..p).map(|j| b[j + 1] / scale[j]).collect();
    let intercept = b[0] - (0..p).map(|j| coef[j] * mean[j]).sum::<f64>();
    Ok(LinearPredictor {
        intercept,
        coef,
        lambda: tuned.lambda,
    })
}
