use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ml::ScoringModel;

/// Center of the generator's sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub mu: Vec<f64>,
}

/// Draw `n` candidates from Normal(mu, I), then move mu up the score
/// gradient by `eta`.
pub fn generate_candidates<R: Rng>(
    scoring: &ScoringModel,
    n: usize,
    eta: f64,
    state: &GeneratorState,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, GeneratorState), SimError> {
    if n == 0 {
        return Err(SimError::Invalid("n must be at least 1".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(SimError::Invalid("eta must be non-negative".into()));
    }
    if scoring.w.len() != state.mu.len() {
        return Err(SimError::Invalid(format!(
            "scoring model has dimension {}, generator {}",
            scoring.w.len(),
            state.mu.len()
        )));
    }
    let candidates = (0..n)
        .map(|_| {
            state
                .mu
                .iter()
                .map(|m| m + Distribution::<f64>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect();
    let grad = scoring.input_gradient(&state.mu);
    let mu = state.mu.iter().zip(&grad).map(|(m, g)| m + eta * g).collect();
    Ok((candidates, GeneratorState { mu }))
}

/// The hidden rule: 1 iff `w* . x + b* > 0`.
pub fn synthetic_label(x: &[f64], w_star: &[f64], b_star: f64) -> Result<u8, SimError> {
    if x.len() != w_star.len() {
        return Err(SimError::Invalid(format!("candidate has dimension {}, rule {}", x.len(), w_star.len())));
    }
    Ok(u8::from(x.iter().zip(w_star).map(|(a, b)| a * b).sum::<f64>() + b_star > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn steering() {
        let s0 = GeneratorState { mu: vec![0.0; 4] };
        let m = ScoringModel {
            w: vec![1.0, 0.0, 0.0, 0.0],
            b: 0.0,
            prior_variance: 1.0,
        };
        let (c, s1) = generate_candidates(&m, 3, 1.0, &s0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(s1.mu, [0.25, 0.0, 0.0, 0.0]);
        let (_, same) = generate_candidates(&m, 3, 0.0, &s0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(same, s0);
        let (_, flat) = generate_candidates(&ScoringModel::zero(4, 1.0), 3, 5.0, &s0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(flat, s0);
    }

    #[test]
    fn labels() {
        let w = [0.5, -1.0];
        assert_eq!(synthetic_label(&w, &w, 0.0).unwrap(), 1);
        assert_eq!(synthetic_label(&[0.0, 0.0], &w, -1.0).unwrap(), 0);
        let x = [0.3, 0.1];
        assert_eq!(synthetic_label(&x, &w, 0.05).unwrap(), synthetic_label(&x, &[5.0, -10.0], 0.5).unwrap());
    }
}
