use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSeries {
    pub times: Vec<f64>,
    pub color: Vec<f64>,
}

impl DegradationSeries {
    pub fn check(&self) -> Result<(), SimError> {
        if self.times.len() != self.color.len() {
            return Err(SimError::Invalid("times and color differ in length".into()));
        }
        if self.times.first().is_some_and(|t| *t != 0.0) {
            return Err(SimError::Invalid("series must start at t=0".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::Invalid("times must increase".into()));
        }
        Ok(())
    }
}

pub fn in_simplex(c: [f64; 2]) -> bool {
    const TOL: f64 = 1e-9;
    c[0] >= -TOL && c[1] >= -TOL && c[0] + c[1] <= 1.0 + TOL && c.iter().all(|v| v.is_finite())
}

fn drift(c: [f64; 2], c_star: [f64; 2]) -> f64 {
    (c[0] - c_star[0]).powi(2) + (c[1] - c_star[1]).powi(2)
}

/// One photograph: color deviation at time `t`.
pub fn degradation_sample<R: Rng>(c: [f64; 2], t: f64, sigma: f64, c_star: [f64; 2], rng: &mut R) -> Result<f64, SimError> {
    if !in_simplex(c) {
        return Err(SimError::Domain(format!("composition ({}, {}) is outside the simplex", c[0], c[1])));
    }
    if !(sigma >= 0.0) {
        return Err(SimError::Invalid("noise must be non-negative".into()));
    }
    let eps = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    Ok(drift(c, c_star) * t + eps)
}

/// Color series at t = 0, dt, 2dt, ... up to the horizon.
pub fn simulate_degradation<R: Rng>(
    c: [f64; 2],
    horizon: f64,
    dt: f64,
    sigma: f64,
    c_star: [f64; 2],
    rng: &mut R,
) -> Result<DegradationSeries, SimError> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(SimError::Invalid("horizon and step must be positive".into()));
    }
    let steps = (horizon / dt + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let color = times
        .iter()
        .map(|&t| degradation_sample(c, t, sigma, c_star, rng))
        .collect::<Result<_, _>>()?;
    Ok(DegradationSeries { times, color })
}

/// Accumulated absolute color change relative to the first photograph.
pub fn instability_index(s: &DegradationSeries) -> f64 {
    let Some(&c0) = s.color.first() else { return 0.0 };
    (1..s.color.len())
        .map(|k| (s.color[k] - c0).abs() * (s.times[k] - s.times[k - 1]))
        .sum()
}

/// Mean of the instability index over measurement noise. Each difference
/// from the first photograph is Normal(r t, 2 sigma^2), whose absolute value
/// has a folded-normal mean.
pub fn expected_instability(c: [f64; 2], c_star: [f64; 2], sigma: f64, times: &[f64]) -> f64 {
    let r = drift(c, c_star);
    let s = sigma * 2f64.sqrt();
    let phi = StatNormal::standard();
    (1..times.len())
        .map(|k| {
            let m = r * times[k];
            let folded = if s > 0.0 {
                s * (2.0 / std::f64::consts::PI).sqrt() * (-m * m / (2.0 * s * s)).exp() + m * (1.0 - 2.0 * phi.cdf(-m / s))
            } else {
                m.abs()
            };
            folded * (times[k] - times[k - 1])
        })
        .sum()
}
