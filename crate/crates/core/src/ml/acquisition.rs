use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::GpModel;
use super::{lex_cmp, MlError};

/// Minimization EI with exploration offset `xi`.
pub fn expected_improvement(mu: f64, sigma: f64, f_min: f64, xi: f64) -> f64 {
    let gain = f_min - xi - mu;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::standard();
    (sigma * (z * n.cdf(z) + n.pdf(z))).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub batch_size: usize,
    pub xi: f64,
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-9)
}

/// Candidates not in `exclude`, in their original order.
pub fn remaining(candidates: &[Vec<f64>], exclude: &[Vec<f64>]) -> Vec<Vec<f64>> {
    candidates
        .iter()
        .filter(|c| !exclude.iter().any(|e| same_point(c, e)))
        .cloned()
        .collect()
}

fn need(left: &[Vec<f64>], batch: usize) -> Result<(), MlError> {
    if batch == 0 {
        return Err(MlError::Invalid("batch size must be at least 1".into()));
    }
    if left.len() < batch {
        return Err(MlError::Exhausted {
            wanted: batch,
            left: left.len(),
        });
    }
    Ok(())
}

/// Highest-EI batch, ties to the lexicographically smaller point. Without
/// training data, a seeded greedy maximin draw is returned instead.
pub fn bo_propose<R: Rng>(
    model: &GpModel,
    candidates: &[Vec<f64>],
    acq: &AcquisitionConfig,
    exclude: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, MlError> {
    let left = remaining(candidates, exclude);
    need(&left, acq.batch_size)?;
    if model.is_empty() {
        return Ok(space_filling(&left, acq.batch_size, rng));
    }
    let f_min = model.y.iter().copied().fold(f64::INFINITY, f64::min);
    let (mu, var) = model.predict(&left)?;
    let mut scored: Vec<(f64, &Vec<f64>)> = left
        .iter()
        .enumerate()
        .map(|(i, p)| (expected_improvement(mu[i], var[i].sqrt(), f_min, acq.xi), p))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| lex_cmp(a.1, b.1)));
    Ok(scored.into_iter().take(acq.batch_size).map(|(_, p)| p.clone()).collect())
}

/// First point uniformly at random, then repeatedly the point farthest from
/// those chosen.
fn space_filling<R: Rng>(left: &[Vec<f64>], batch: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut chosen = vec![left[rng.random_range(0..left.len())].clone()];
    while chosen.len() < batch {
        let best = left
            .iter()
            .filter(|c| !chosen.iter().any(|s| same_point(c, s)))
            .map(|c| {
                let d = chosen
                    .iter()
                    .map(|s| s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                (d, c)
            })
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| lex_cmp(b.1, a.1)))
            .map(|(_, c)| c.clone())
            .expect("enough candidates were checked");
        chosen.push(best);
    }
    chosen
}

/// Uniform draw without replacement.
pub fn random_propose<R: Rng>(candidates: &[Vec<f64>], exclude: &[Vec<f64>], batch: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, MlError> {
    let mut left = remaining(candidates, exclude);
    need(&left, batch)?;
    let (picked, _) = left.partial_shuffle(rng, batch);
    Ok(picked.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::gp::{gp_fit, GpHyper};
    use crate::rng::rng_from_seed;

    #[test]
    fn ei_branches() {
        assert_eq!(expected_improvement(2.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0, 0.0), 0.5);
        assert!((expected_improvement(0.0, 1.0, 0.0, 0.0) - 0.398_942_280_4).abs() < 1e-9);
    }

    #[test]
    fn positive_ei_ranked_first() {
        let h = GpHyper {
            sigma_f2: 1.0,
            ell: 0.1,
            sigma_n2: 0.0,
            m0: 0.0,
        };
        let m = gp_fit(&[vec![0.0]], &[1.0], h).unwrap();
        // At the data point sigma is 0 and mu is above f_min - xi; far away EI > 0.
        let c = vec![vec![0.0], vec![5.0]];
        let acq = AcquisitionConfig { batch_size: 2, xi: 0.1 };
        let b = bo_propose(&m, &c, &acq, &[], &mut rng_from_seed(1)).unwrap();
        assert_eq!(b, vec![vec![5.0], vec![0.0]]);
    }

    #[test]
    fn exhaustion_and_determinism() {
        let c: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let a = random_propose(&c, &[], 10, &mut rng_from_seed(3)).unwrap();
        let mut sorted = a.clone();
        sorted.sort_by(|x, y| lex_cmp(x, y));
        assert_eq!(sorted, c);
        assert_eq!(a, random_propose(&c, &[], 10, &mut rng_from_seed(3)).unwrap());
        let r = random_propose(&c, &c[..8], 3, &mut rng_from_seed(3));
        assert!(matches!(r, Err(MlError::Exhausted { wanted: 3, left: 2 })));
        let prior = GpModel::prior(GpHyper {
            sigma_f2: 1.0,
            ell: 1.0,
            sigma_n2: 0.0,
            m0: 0.0,
        })
        .unwrap();
        let acq = AcquisitionConfig { batch_size: 1, xi: 0.0 };
        assert!(matches!(bo_propose(&prior, &c, &acq, &c, &mut rng_from_seed(1)), Err(MlError::Exhausted { .. })));
        let acq = AcquisitionConfig { batch_size: 3, xi: 0.0 };
        let first = bo_propose(&prior, &c, &acq, &[], &mut rng_from_seed(9)).unwrap();
        assert_eq!(first, bo_propose(&prior, &c, &acq, &[], &mut rng_from_seed(9)).unwrap());
        assert_eq!(first.len(), 3);
    }
}
