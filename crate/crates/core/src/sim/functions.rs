use std::f64::consts::PI;
use std::str::FromStr;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Branin,
    Sphere,
    Rastrigin,
}

impl FromStr for TestFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "branin" => Ok(TestFunction::Branin),
            "sphere" => Ok(TestFunction::Sphere),
            "rastrigin" => Ok(TestFunction::Rastrigin),
            other => Err(format!("unknown test function '{other}'")),
        }
    }
}

impl TestFunction {
    /// Per-coordinate bounds of the standard domain.
    pub fn bounds(self, dim: usize) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            TestFunction::Sphere | TestFunction::Rastrigin => vec![(-5.12, 5.12); dim],
        }
    }
}

pub fn test_function(f: TestFunction, x: &[f64]) -> Result<f64, SimError> {
    if x.is_empty() || (f == TestFunction::Branin && x.len() != 2) {
        return Err(SimError::Domain(format!("wrong dimension {}", x.len())));
    }
    for (v, (lo, hi)) in x.iter().zip(f.bounds(x.len())) {
        if !(*v >= lo && *v <= hi) {
            return Err(SimError::Domain(format!("{v} is outside [{lo}, {hi}]")));
        }
    }
    Ok(match f {
        TestFunction::Sphere => x.iter().map(|v| v * v).sum(),
        TestFunction::Rastrigin => {
            10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
        }
        TestFunction::Branin => {
            let (a, b, c, r, s, t) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
            a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s
        }
    })
}
