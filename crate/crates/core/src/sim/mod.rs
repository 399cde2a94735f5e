//! Closed-form stand-ins for the physical parts of the demo campaigns.

mod behavior;
mod chamber;
mod chemistry;
mod functions;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use behavior::{behavior_target, inner_behavior_optimize, outer_performance, reward, HillClimber};
pub use chamber::{degradation_sample, expected_instability, in_simplex, instability_index, simulate_degradation, DegradationSeries};
pub use chemistry::{generate_candidates, synthetic_label, GeneratorState};
pub use functions::{test_function, TestFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("out of domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Ground truth for the simulators. Read from a file given to a plugin as a
/// parameter and never written into artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub c_star: [f64; 2],
    pub noise_sigma: f64,
    pub d_center: [f64; 2],
    pub w_star: Vec<f64>,
    pub b_star: f64,
    pub eta: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            c_star: [0.2, 0.1],
            noise_sigma: 0.05,
            d_center: [1.0, -0.5],
            w_star: vec![1.0, -0.8, 0.5, 0.3],
            b_star: 0.2,
            eta: 1.0,
        }
    }
}

impl SimulatorConfig {
    pub fn load(path: &Path) -> Result<SimulatorConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
