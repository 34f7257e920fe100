//! Sparse linear individualized treatment rules from observational data.
//!
//! The estimator minimizes an L1-penalized convex relaxation of the doubly
//! robust (AIPW) value estimate, with nuisance models fitted out of fold.
//! Coordinates of the rule are tested and given confidence intervals through
//! a split-and-pooled de-correlated score; the value of the fitted rule gets
//! a single-split confidence interval. A Monte Carlo harness reproduces the
//! simulation study that motivates the method.

pub mod aipw;
pub mod data;
pub mod error;
pub mod inference;
pub mod nuisance;
pub mod pearl;
pub mod seed;
pub mod simulation;
pub mod solver;
pub mod surrogate;
pub mod value;

pub use data::{Arm, ColumnSpec, Dataset, FoldPlan};
pub use error::{Error, ErrorKind, Result};
pub use seed::SeedStream;
