use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

const THETA_BOUND: f64 = 5.0;
const DESIGN_BOUND: f64 = 2.0;

fn check_design(d: [f64; 2]) -> Result<(), SimError> {
    if d.iter().all(|v| v.is_finite() && v.abs() <= DESIGN_BOUND + 1e-9) {
        Ok(())
    } else {
        Err(SimError::Domain(format!("design ({}, {}) is outside [-2, 2]^2", d[0], d[1])))
    }
}

/// Behavior that suits design `d` best.
pub fn behavior_target(d: [f64; 2]) -> f64 {
    d[0].sin() + d[1]
}

pub fn reward(d: [f64; 2], theta: f64) -> f64 {
    -(theta - behavior_target(d)).powi(2)
}

/// Design quality once behavior has been tuned: `R - 0.1 |d - center|^2`.
pub fn outer_performance(d: [f64; 2], r: f64, center: [f64; 2]) -> f64 {
    r - 0.1 * ((d[0] - center[0]).powi(2) + (d[1] - center[1]).powi(2))
}

/// 1-d hill climber over theta. Starts at 0 with unit step in a random
/// direction; a failed move flips the direction and every second failure
/// halves the step. Each `advance` spends one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillClimber {
    pub theta: f64,
    pub best: f64,
    pub step: f64,
    pub direction: f64,
    pub failures: u32,
    pub evaluations: u32,
}

impl HillClimber {
    pub fn start<R: Rng>(d: [f64; 2], rng: &mut R) -> Result<HillClimber, SimError> {
        check_design(d)?;
        let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
        Ok(HillClimber {
            theta: 0.0,
            best: reward(d, 0.0),
            step: 1.0,
            direction,
            failures: 0,
            evaluations: 1,
        })
    }

    pub fn advance(&mut self, d: [f64; 2]) -> Result<(), SimError> {
        check_design(d)?;
        let trial = (self.theta + self.direction * self.step).clamp(-THETA_BOUND, THETA_BOUND);
        let f = reward(d, trial);
        self.evaluations += 1;
        if f > self.best {
            self.theta = trial;
            self.best = f;
        } else {
            self.direction = -self.direction;
            self.failures += 1;
            if self.failures % 2 == 0 {
                self.step *= 0.5;
            }
        }
        Ok(())
    }
}

/// Spend `budget` evaluations; returns the best theta and its reward.
pub fn inner_behavior_optimize<R: Rng>(d: [f64; 2], budget: u32, rng: &mut R) -> Result<(f64, f64), SimError> {
    if budget == 0 {
        return Err(SimError::Invalid("budget must be at least 1".into()));
    }
    let mut h = HillClimber::start(d, rng)?;
    while h.evaluations < budget {
        h.advance(d)?;
    }
    Ok((h.theta, h.best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn start_point_optimum() {
        let (t, r) = inner_behavior_optimize([0.0, 0.0], 20, &mut rng_from_seed(1)).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn single_evaluation_budget() {
        let d = [1.0, 0.5];
        let (_, r) = inner_behavior_optimize(d, 1, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r, -behavior_target(d).powi(2));
        assert!(inner_behavior_optimize([3.0, 0.0], 5, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn performance_examples() {
        assert_eq!(outer_performance([1.0, -0.5], 0.0, [1.0, -0.5]), 0.0);
        assert!((outer_performance([2.0, 2.0], 0.0, [1.0, -0.5]) + 0.725).abs() < 1e-12);
    }
}
