//! Convex surrogates for the 0-1 loss and the two-sided weighted loss
//! `Ω₊ φ(t) + Ω₋ φ(-t)` built from them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::solver::{SmoothLoss, SubsetLoss};

/// A convex surrogate `φ` with `φ'(0) < 0` and `φ'' > 0`.
pub trait Surrogate: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
    /// Global upper bound on `φ''`, when one exists.
    fn curvature_sup(&self) -> Option<f64>;
}

/// `φ(t) = log(1 + e^{-t})`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Logistic;

fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Surrogate for Logistic {
    fn value(&self, t: f64) -> f64 {
        if t > 0.0 {
            (-t).exp().ln_1p()
        } else {
            -t + t.exp().ln_1p()
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        -expit(-t)
    }

    fn second_derivative(&self, t: f64) -> f64 {
        expit(t) * expit(-t)
    }

    fn curvature_sup(&self) -> Option<f64> {
        Some(0.25)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[default]
    Logistic,
}

impl SurrogateKind {
    pub fn build(self) -> Arc<dyn Surrogate> {
        match self {
            SurrogateKind::Logistic => Arc::new(Logistic),
        }
    }
}

/// Per-observation loss `Ω₊ᵢ φ(t) + Ω₋ᵢ φ(-t)`.
///
/// The derivative in `t` is `Ω₊φ'(t) - Ω₋φ'(-t)` and the curvature
/// `Ω₊φ''(t) + Ω₋φ''(-t)`.
#[derive(Debug, Clone)]
pub struct OmegaLoss {
    omega_plus: Vec<f64>,
    omega_minus: Vec<f64>,
    phi: Arc<dyn Surrogate>,
}

impl OmegaLoss {
    /// Panics if the weights differ in length or any weight is negative.
    pub fn new(omega_plus: Vec<f64>, omega_minus: Vec<f64>, phi: Arc<dyn Surrogate>) -> Self {
        assert_eq!(omega_plus.len(), omega_minus.len(), "Ω₊ and Ω₋ differ in length");
        assert!(
            omega_plus.iter().chain(&omega_minus).all(|w| *w >= 0.0),
            "Ω weights must be nonnegative"
        );
        OmegaLoss {
            omega_plus,
            omega_minus,
            phi,
        }
    }

    pub fn omega_plus(&self) -> &[f64] {
        &self.omega_plus
    }

    pub fn omega_minus(&self) -> &[f64] {
        &self.omega_minus
    }

    pub fn surrogate(&self) -> &Arc<dyn Surrogate> {
        &self.phi
    }
}

impl SmoothLoss for OmegaLoss {
    fn len(&self) -> usize {
        self.omega_plus.len()
    }

    fn value(&self, i: usize, t: f64) -> f64 {
        let (wp, wm) = (self.omega_plus[i], self.omega_minus[i]);
        let mut v = 0.0;
        if wp != 0.0 {
            v += wp * self.phi.value(t);
        }
        if wm != 0.0 {
            v += wm * self.phi.value(-t);
        }
        v
    }

    fn derivative(&self, i: usize, t: f64) -> f64 {
        self.omega_plus[i] * self.phi.derivative(t) - self.omega_minus[i] * self.phi.derivative(-t)
    }

    fn curvature(&self, i: usize, t: f64) -> f64 {
        self.omega_plus[i] * self.phi.second_derivative(t)
            + self.omega_minus[i] * self.phi.second_derivative(-t)
    }

    fn curvature_bound(&self, i: usize) -> Option<f64> {
        self.phi
            .curvature_sup()
            .map(|c| c * (self.omega_plus[i] + self.omega_minus[i]))
    }
}

impl SubsetLoss for OmegaLoss {
    fn subset(&self, idx: &[usize]) -> Self {
        OmegaLoss {
            omega_plus: idx.iter().map(|&i| self.omega_plus[i]).collect(),
            omega_minus: idx.iter().map(|&i| self.omega_minus[i]).collect(),
            phi: Arc::clone(&self.phi),
        }
    }
}
