use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde_json::{json, Value};

use super::MlError;

/// Largest diagonal jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub sigma_f2: f64,
    pub ell: f64,
    pub sigma_n2: f64,
    pub m0: f64,
}

impl GpHyper {
    pub fn check(&self) -> Result<(), MlError> {
        let ok = self.sigma_f2 > 0.0
            && self.ell > 0.0
            && self.sigma_n2 >= 0.0
            && [self.sigma_f2, self.ell, self.sigma_n2, self.m0].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MlError::Invalid(format!("bad GP hyperparameters {self:?}")))
        }
    }
}

/// Squared-exponential GP posterior. An empty training set is the prior.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyper,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl GpModel {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.hyper.sigma_f2 * (-sq_dist(a, b) / (2.0 * self.hyper.ell * self.hyper.ell)).exp()
    }

    pub fn prior(hyper: GpHyper) -> Result<GpModel, MlError> {
        hyper.check()?;
        Ok(GpModel {
            hyper,
            x: Vec::new(),
            y: Vec::new(),
            chol: None,
            alpha: DVector::zeros(0),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.x.first().map(Vec::len)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kind": "gp",
            "sigma_f2": self.hyper.sigma_f2,
            "ell": self.hyper.ell,
            "sigma_n2": self.hyper.sigma_n2,
            "m0": self.hyper.m0,
            "X": self.x,
            "y": self.y,
        })
    }

    /// Rebuild from the stored form; the factorization is recomputed.
    pub fn from_json(v: &Value) -> Result<GpModel, MlError> {
        if v.get("kind").and_then(Value::as_str) != Some("gp") {
            return Err(MlError::Invalid("not a gp model".into()));
        }
        let num = |k: &str| {
            v.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| MlError::Invalid(format!("gp model lacks '{k}'")))
        };
        let hyper = GpHyper {
            sigma_f2: num("sigma_f2")?,
            ell: num("ell")?,
            sigma_n2: num("sigma_n2")?,
            m0: num("m0")?,
        };
        let x: Vec<Vec<f64>> = serde_json::from_value(v.get("X").cloned().unwrap_or(json!([])))
            .map_err(|e| MlError::Invalid(format!("gp X: {e}")))?;
        let y: Vec<f64> = serde_json::from_value(v.get("y").cloned().unwrap_or(json!([])))
            .map_err(|e| MlError::Invalid(format!("gp y: {e}")))?;
        if x.is_empty() {
            GpModel::prior(hyper)
        } else {
            gp_fit(&x, &y, hyper)
        }
    }

    /// Posterior means and latent variances at the queries.
    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), MlError> {
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        for q in queries {
            if let Some(d) = self.dim() {
                if q.len() != d {
                    return Err(MlError::Dimension {
                        expected: d,
                        got: q.len(),
                    });
                }
            }
            let Some(chol) = &self.chol else {
                means.push(self.hyper.m0);
                vars.push(self.hyper.sigma_f2);
                continue;
            };
            let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel(xi, q)));
            means.push(self.hyper.m0 + k.dot(&self.alpha));
            let v = chol.l().solve_lower_triangular(&k).expect("cholesky factor is invertible");
            let var = self.hyper.sigma_f2 - v.dot(&v);
            vars.push(var.max(0.0));
        }
        Ok((means, vars))
    }
}

/// Condition the prior on (X, y). Jitter escalates by decades up to
/// `MAX_JITTER`; a jittered fit must still reproduce its targets.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<GpModel, MlError> {
    hyper.check()?;
    if x.is_empty() {
        return Err(MlError::Invalid("gp_fit needs at least one point".into()));
    }
    if x.len() != y.len() {
        return Err(MlError::Invalid(format!("{} inputs but {} targets", x.len(), y.len())));
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
            return Err(MlError::Invalid("non-finite training input".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MlError::Invalid("non-finite training target".into()));
    }
    let mut model = GpModel::prior(hyper)?;
    model.x = x.to_vec();
    model.y = y.to_vec();
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| model.kernel(&x[i], &x[j]));
    let r = DVector::from_iterator(n, y.iter().map(|v| v - hyper.m0));

    let mut jitter = 0.0;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += hyper.sigma_n2 + jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let alpha = chol.solve(&r);
            if jitter > 0.0 {
                // Jitter hides singularity; conflicting duplicates show up as
                // a fit that no longer passes through its own data.
                let mut a0 = k.clone();
                for i in 0..n {
                    a0[(i, i)] += hyper.sigma_n2;
                }
                let resid = (&a0 * &alpha - &r).amax();
                let scale = r.amax().max(1.0);
                if resid > 1e-4 * scale {
                    return Err(MlError::Numerical(format!(
                        "kernel matrix is singular (residual {resid:.3e} after jitter {jitter:.0e})"
                    )));
                }
            }
            model.chol = Some(chol);
            model.alpha = alpha;
            return Ok(model);
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.000001 {
            return Err(MlError::Numerical("kernel matrix is not positive definite".into()));
        }
    }
}
