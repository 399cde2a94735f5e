//! Numerical building blocks for the learning and decision plugins.

mod acquisition;
mod gp;
mod preprocess;
mod scoring;

use std::cmp::Ordering;

use thiserror::Error;

pub use acquisition::{bo_propose, expected_improvement, random_propose, remaining, AcquisitionConfig};
pub use gp::{gp_fit, GpHyper, GpModel, MAX_JITTER};
pub use preprocess::{binarize, standardize};
pub use scoring::{fit_scoring, map_gradient, map_objective, sigmoid, uncertainty_select, ScoringModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("candidates exhausted: wanted {wanted}, {left} left")]
    Exhausted { wanted: usize, left: usize },
    #[error("degenerate scale: constant column")]
    Degenerate,
}

/// Lexicographic order on coordinates; NaN compares equal.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}
