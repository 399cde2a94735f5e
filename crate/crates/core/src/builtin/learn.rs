use std::sync::Arc;

use serde_json::{json, Value};

use super::data::pool_of;
use super::{candidate_set, maximizing, observations_of, sense_values, Call, FnPlugin, Out, BUILTIN_VERSION};
use crate::dsl::ModuleKind;
use crate::ml::{bo_propose, fit_scoring, gp_fit, lex_cmp, random_propose, remaining, uncertainty_select, AcquisitionConfig, GpHyper, GpModel, ScoringModel};
use crate::plugin::{DataKind, MethodSpec, ParamSpec, ParamType, Plugin, PluginDescriptor, PortSpec};

pub(super) fn all() -> Vec<Arc<dyn Plugin>> {
    vec![gp_regression(), bayes_opt(), random_search(), uncertainty_select_plugin(), scoring_inference()]
}

fn gp_params(m: MethodSpec) -> MethodSpec {
    m.param(ParamSpec::optional("sigma_f2", ParamType::Number, Some(json!(1.0))))
        .param(ParamSpec::optional("ell", ParamType::Number, Some(json!(0.3))))
        .param(ParamSpec::optional("sigma_n2", ParamType::Number, Some(json!(1e-6))))
        .param(ParamSpec::optional("m0", ParamType::Number, Some(json!(0.0))))
        .param(ParamSpec::optional("standardize", ParamType::Boolean, Some(json!(true))))
        .param(ParamSpec::optional("sense", sense_values(), Some(json!("minimize"))))
}

/// Fit on targets mapped to a minimization problem: negated when
/// maximizing, then standardized when asked. The map is stored alongside
/// the model as `sign`, `shift`, `scale` so predictions can be mapped back.
fn fit_model(c: &Call, pts: &[Vec<f64>], vals: &[f64]) -> Result<Value, String> {
    let hyper = GpHyper {
        sigma_f2: c.num("sigma_f2")?,
        ell: c.num("ell")?,
        sigma_n2: c.num("sigma_n2")?,
        m0: c.num("m0")?,
    };
    let sign = if maximizing(c) { -1.0 } else { 1.0 };
    let mut y: Vec<f64> = vals.iter().map(|v| sign * v).collect();
    let (mut shift, mut scale) = (0.0, 1.0);
    if c.flag("standardize") && y.len() >= 2 {
        let n = y.len() as f64;
        shift = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 {
            scale = sd;
        }
        y = y.iter().map(|v| (v - shift) / scale).collect();
    }
    let model = if pts.is_empty() {
        GpModel::prior(hyper)
    } else {
        gp_fit(pts, &y, hyper)
    }
    .map_err(|e| e.to_string())?;
    let mut v = model.to_json();
    v["sign"] = json!(sign);
    v["shift"] = json!(shift);
    v["scale"] = json!(scale);
    Ok(v)
}

/// Posterior means and variances in the units of the original targets.
pub(super) fn predict_original(model: &Value, pts: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), String> {
    let gp = GpModel::from_json(model).map_err(|e| e.to_string())?;
    let get = |k: &str, d: f64| model.get(k).and_then(Value::as_f64).unwrap_or(d);
    let (sign, shift, scale) = (get("sign", 1.0), get("shift", 0.0), get("scale", 1.0));
    let (mu, var) = gp.predict(pts).map_err(|e| e.to_string())?;
    Ok((
        mu.iter().map(|m| sign * (m * scale + shift)).collect(),
        var.iter().map(|v| v * scale * scale).collect(),
    ))
}

fn gp_regression() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("gp-regression", ModuleKind::Modeling, BUILTIN_VERSION)
            .method(
                gp_params(MethodSpec::new("fit"))
                    .input(PortSpec::new("observations", DataKind::Record))
                    .output(PortSpec::new("model", DataKind::ModelParams)),
            )
            .method(
                MethodSpec::new("predict")
                    .input(PortSpec::new("model", DataKind::ModelParams))
                    .input(PortSpec::new("candidates", DataKind::CandidateSet))
                    .output(PortSpec::new("predictions", DataKind::Record)),
            ),
        vec![("fit", gp_fit_method), ("predict", gp_predict_method)],
    )
}

fn gp_fit_method(c: &Call) -> Result<Out, String> {
    let (pts, vals) = observations_of(c.need("observations")?)?;
    let n = pts.len() as f64;
    Ok(Out::new().put("model", fit_model(c, &pts, &vals)?).diag("n_train", n))
}

fn gp_predict_method(c: &Call) -> Result<Out, String> {
    let pts = c.points("candidates")?;
    let (mean, var) = predict_original(c.need("model")?, &pts)?;
    Ok(Out::new().put("predictions", json!({"points": pts, "mean": mean, "variance": var})))
}

fn batch_param() -> ParamSpec {
    ParamSpec::optional("batch_size", ParamType::Integer, Some(json!(1)))
}

fn bayes_opt() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("bayes-opt", ModuleKind::DecisionMaking, BUILTIN_VERSION)
            .method(
                gp_params(MethodSpec::new("fit"))
                    .input(PortSpec::optional("observations", DataKind::Record))
                    .output(PortSpec::new("model", DataKind::ModelParams)),
            )
            .method(
                MethodSpec::new("propose")
                    .param(batch_param())
                    .param(ParamSpec::optional("xi", ParamType::Number, Some(json!(0.01))))
                    .input(PortSpec::new("model", DataKind::ModelParams))
                    .input(PortSpec::new("candidates", DataKind::CandidateSet))
                    .input(PortSpec::optional("observations", DataKind::Record))
                    .output(PortSpec::new("suggestions", DataKind::CandidateSet)),
            ),
        vec![("fit", bo_fit), ("propose", bo_propose_method)],
    )
}

/// Without observations the model is the prior.
fn bo_fit(c: &Call) -> Result<Out, String> {
    let (pts, vals) = match c.input("observations") {
        Some(o) => observations_of(o)?,
        None => (Vec::new(), Vec::new()),
    };
    let n = pts.len() as f64;
    Ok(Out::new().put("model", fit_model(c, &pts, &vals)?).diag("n_train", n))
}

/// Points already observed are never proposed again.
fn bo_propose_method(c: &Call) -> Result<Out, String> {
    let model = GpModel::from_json(c.need("model")?).map_err(|e| e.to_string())?;
    let candidates = c.points("candidates")?;
    let exclude = c.opt_points("observations")?;
    let acq = AcquisitionConfig {
        batch_size: c.count("batch_size")?,
        xi: c.num("xi")?,
    };
    if !(acq.xi >= 0.0) {
        return Err("xi must be non-negative".into());
    }
    let picked = bo_propose(&model, &candidates, &acq, &exclude, &mut c.rng()).map_err(|e| e.to_string())?;
    let left = remaining(&candidates, &exclude).len() as f64;
    Ok(Out::new().put("suggestions", candidate_set(&picked)).diag("remaining", left))
}

fn random_search() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("random-search", ModuleKind::DecisionMaking, BUILTIN_VERSION).method(
            MethodSpec::new("propose")
                .param(batch_param())
                .input(PortSpec::new("candidates", DataKind::CandidateSet))
                .input(PortSpec::optional("observations", DataKind::Record))
                .output(PortSpec::new("suggestions", DataKind::CandidateSet)),
        ),
        vec![("propose", random_propose_method)],
    )
}

fn random_propose_method(c: &Call) -> Result<Out, String> {
    let candidates = c.points("candidates")?;
    let exclude = c.opt_points("observations")?;
    let picked = random_propose(&candidates, &exclude, c.count("batch_size")?, &mut c.rng()).map_err(|e| e.to_string())?;
    Ok(Out::new().put("suggestions", candidate_set(&picked)))
}

fn uncertainty_select_plugin() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("uncertainty-select", ModuleKind::DecisionMaking, BUILTIN_VERSION).method(
            MethodSpec::new("select")
                .input(PortSpec::new("candidates", DataKind::CandidateSet))
                .input(PortSpec::optional("scoring", DataKind::ModelParams))
                .input(PortSpec::optional("prior", DataKind::ModelParams))
                .input(PortSpec::optional("labeled", DataKind::Record))
                .output(PortSpec::new("query", DataKind::CandidateSet)),
        ),
        vec![("select", select_method)],
    )
}

/// Scores with `scoring`, else `prior`, else a flat model; labeled points
/// are skipped.
fn select_method(c: &Call) -> Result<Out, String> {
    let candidates = c.points("candidates")?;
    let model = match c.input("scoring").or(c.input("prior")) {
        Some(m) => ScoringModel::from_json(m).map_err(|e| e.to_string())?,
        None => ScoringModel::zero(candidates.first().map_or(0, Vec::len), 1.0),
    };
    let exclude = match c.input("labeled") {
        Some(l) => pool_of(l)?.0,
        None => Vec::new(),
    };
    let i = uncertainty_select(&model, &candidates, &exclude).ok_or("every candidate is already labeled")?;
    let score = model.score(&candidates[i]);
    Ok(Out::new()
        .put("query", candidate_set(&candidates[i..=i]))
        .diag("score", score))
}

fn scoring_inference() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("scoring-inference", ModuleKind::Modeling, BUILTIN_VERSION).method(
            MethodSpec::new("fit")
                .param(ParamSpec::optional("prior_variance", ParamType::Number, Some(json!(1.0))))
                .input(PortSpec::new("labeled", DataKind::Record))
                .output(PortSpec::new("model", DataKind::ModelParams)),
        ),
        vec![("fit", scoring_fit)],
    )
}

/// MAP estimate of the logistic scoring rule.
fn scoring_fit(c: &Call) -> Result<Out, String> {
    let (pts, labels) = pool_of(c.need("labeled")?)?;
    if pts.is_empty() {
        return Err("no labeled points".into());
    }
    let model = fit_scoring(&pts, &labels, c.num("prior_variance")?).map_err(|e| e.to_string())?;
    Ok(Out::new().put("model", model.to_json()).diag("n_labeled", pts.len() as f64))
}

/// Index of the best predicted point, ties to the lexicographically smaller.
pub(super) fn best_index(points: &[Vec<f64>], values: &[f64], maximize: bool) -> Option<usize> {
    (0..points.len()).min_by(|&a, &b| {
        let (va, vb) = if maximize { (-values[a], -values[b]) } else { (values[a], values[b]) };
        va.partial_cmp(&vb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| lex_cmp(&points[a], &points[b]))
    })
}
