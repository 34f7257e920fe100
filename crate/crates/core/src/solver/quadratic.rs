use ndarray::ArrayView2;

use super::{solve_l1, L1Fit, SmoothLoss, SolverOptions, SubsetLoss};
use crate::error::{Error, Result};

/// `fᵢ(t) = ½ hᵢ (yᵢ - t)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuadratic {
    pub target: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedQuadratic {
    pub fn new(target: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if target.len() != weights.len() {
            return Err(Error::validation("target and weights differ in length"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("observation weights must be finite and nonnegative"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::validation("observation weights are all zero"));
        }
        Ok(WeightedQuadratic { target, weights })
    }

    pub fn unweighted(target: Vec<f64>) -> Self {
        let weights = vec![1.0; target.len()];
        WeightedQuadratic { target, weights }
    }
}

impl SmoothLoss for WeightedQuadratic {
    fn len(&self) -> usize {
        self.target.len()
    }

    fn value(&self, i: usize, t: f64) -> f64 {
        let r = self.target[i] - t;
        0.5 * self.weights[i] * r * r
    }

    fn derivative(&self, i: usize, t: f64) -> f64 {
        self.weights[i] * (t - self.target[i])
    }

    fn curvature(&self, i: usize, _t: f64) -> f64 {
        self.weights[i]
    }

    fn curvature_bound(&self, i: usize) -> Option<f64> {
        Some(self.weights[i])
    }
}

impl SubsetLoss for WeightedQuadratic {
    fn subset(&self, idx: &[usize]) -> Self {
        WeightedQuadratic {
            target: idx.iter().map(|&i| self.target[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// Weighted lasso least squares:
/// `min_w (1/m) Σᵢ ½ hᵢ (targetᵢ - featuresᵢᵀw)² + λ‖w‖₁`.
pub fn weighted_lasso_ls(
    features: ArrayView2<'_, f64>,
    target: &[f64],
    weights: &[f64],
    lambda: f64,
    opts: &SolverOptions,
) -> Result<L1Fit> {
    let loss = WeightedQuadratic::new(target.to_vec(), weights.to_vec())?;
    solve_l1(features, &loss, lambda, opts)
}
