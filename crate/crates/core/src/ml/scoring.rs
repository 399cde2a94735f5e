use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::{lex_cmp, MlError};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic scoring rule `sigmoid(w.x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub prior_variance: f64,
}

impl ScoringModel {
    pub fn zero(dim: usize, prior_variance: f64) -> Self {
        ScoringModel {
            w: vec![0.0; dim],
            b: 0.0,
            prior_variance,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Gradient of the score with respect to the input.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.score(x);
        self.w.iter().map(|w| s * (1.0 - s) * w).collect()
    }

    pub fn to_json(&self) -> Value {
        json!({"kind": "scoring", "w": self.w, "b": self.b, "prior_variance": self.prior_variance})
    }

    pub fn from_json(v: &Value) -> Result<ScoringModel, MlError> {
        if v.get("kind").and_then(Value::as_str) != Some("scoring") {
            return Err(MlError::Invalid("not a scoring model".into()));
        }
        let w: Vec<f64> = serde_json::from_value(v.get("w").cloned().unwrap_or(Value::Null))
            .map_err(|e| MlError::Invalid(format!("scoring w: {e}")))?;
        let b = v
            .get("b")
            .and_then(Value::as_f64)
            .ok_or_else(|| MlError::Invalid("scoring model lacks 'b'".into()))?;
        let prior_variance = v.get("prior_variance").and_then(Value::as_f64).unwrap_or(1.0);
        Ok(ScoringModel { w, b, prior_variance })
    }
}

/// Negative log posterior up to a constant; theta is (w, b).
pub fn map_objective(x: &[Vec<f64>], labels: &[u8], prior_variance: f64, theta: &[f64]) -> f64 {
    let d = theta.len() - 1;
    let mut f = theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * prior_variance);
    for (xi, &yi) in x.iter().zip(labels) {
        let z = xi.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d];
        // log(1 + e^z) - y z, computed stably.
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        f += softplus - f64::from(yi) * z;
    }
    f
}

pub fn map_gradient(x: &[Vec<f64>], labels: &[u8], prior_variance: f64, theta: &[f64]) -> Vec<f64> {
    let d = theta.len() - 1;
    let mut g: Vec<f64> = theta.iter().map(|t| t / prior_variance).collect();
    for (xi, &yi) in x.iter().zip(labels) {
        let z = xi.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d];
        let r = sigmoid(z) - f64::from(yi);
        for j in 0..d {
            g[j] += r * xi[j];
        }
        g[d] += r;
    }
    g
}

/// MAP logistic fit by damped Newton from zero. The Gaussian prior covers
/// the bias as well as the weights.
pub fn fit_scoring(x: &[Vec<f64>], labels: &[u8], prior_variance: f64) -> Result<ScoringModel, MlError> {
    if x.is_empty() || x.len() != labels.len() {
        return Err(MlError::Invalid("need one label per example and at least one example".into()));
    }
    if !(prior_variance > 0.0 && prior_variance.is_finite()) {
        return Err(MlError::Invalid("prior variance must be positive".into()));
    }
    let d = x[0].len();
    for row in x {
        if row.len() != d {
            return Err(MlError::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MlError::Invalid("non-finite feature".into()));
        }
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(MlError::Invalid("labels must be 0 or 1".into()));
    }
    let p = d + 1;
    let mut theta = vec![0.0; p];
    for _ in 0..500 {
        let g = map_gradient(x, labels, prior_variance, &theta);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-8 {
            break;
        }
        let mut h = DMatrix::<f64>::identity(p, p) / prior_variance;
        for xi in x {
            let z = xi.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d];
            let s = sigmoid(z);
            let wgt = s * (1.0 - s);
            let xt: Vec<f64> = xi.iter().copied().chain([1.0]).collect();
            for a in 0..p {
                for b in 0..p {
                    h[(a, b)] += wgt * xt[a] * xt[b];
                }
            }
        }
        // The objective is strictly convex, so the Hessian is positive definite.
        let step = h
            .cholesky()
            .ok_or_else(|| MlError::Numerical("Hessian lost definiteness".into()))?
            .solve(&DVector::from_vec(g));
        let f0 = map_objective(x, labels, prior_variance, &theta);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if map_objective(x, labels, prior_variance, &cand) <= f0 || t < 1e-10 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(ScoringModel {
        w: theta[..d].to_vec(),
        b: theta[d],
        prior_variance,
    })
}

/// Index of the candidate whose score is nearest 0.5, skipping `exclude`;
/// ties to the lexicographically smaller point.
pub fn uncertainty_select(model: &ScoringModel, candidates: &[Vec<f64>], exclude: &[Vec<f64>]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !exclude.iter().any(|e| e == *c))
        .map(|(i, c)| ((model.score(c) - 0.5).abs(), i))
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| lex_cmp(&candidates[a.1], &candidates[b.1]))
        })
        .map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_d() {
        let m = fit_scoring(&[vec![-1.0], vec![1.0]], &[0, 1], 1.0).unwrap();
        assert!(m.w[0] > 0.0);
        let same = fit_scoring(&[vec![-1.0], vec![1.0], vec![2.0]], &[1, 1, 1], 1.0).unwrap();
        assert!(same.w[0].is_finite() && same.b.is_finite());
    }

    #[test]
    fn select_nearest_half() {
        // scores 0.9, 0.51, 0.1 via the logit.
        let m = ScoringModel {
            w: vec![1.0],
            b: 0.0,
            prior_variance: 1.0,
        };
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let c = vec![vec![logit(0.9)], vec![logit(0.51)], vec![logit(0.1)]];
        assert_eq!(uncertainty_select(&m, &c, &[]), Some(1));
        let flat = ScoringModel::zero(2, 1.0);
        let c = vec![vec![1.0, 0.0], vec![0.0, 5.0], vec![0.0, 1.0]];
        assert_eq!(uncertainty_select(&flat, &c, &[]), Some(2));
        assert_eq!(uncertainty_select(&flat, &c[..1], &[]), Some(0));
        assert_eq!(uncertainty_select(&flat, &c[..1], &c[..1]), None);
    }
}
