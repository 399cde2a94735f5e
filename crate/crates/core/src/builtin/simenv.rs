use std::sync::Arc;

use serde_json::{json, Value};

use super::{candidate_set, observations, pair, points_of, Call, FnPlugin, Out, BUILTIN_VERSION};
use crate::dsl::ModuleKind;
use crate::ml::ScoringModel;
use crate::plugin::{DataKind, MethodSpec, ParamSpec, ParamType, Plugin, PluginDescriptor, PortSpec};
use crate::sim::{
    generate_candidates, instability_index, outer_performance, reward, simulate_degradation, test_function, DegradationSeries,
    GeneratorState, HillClimber, TestFunction,
};

pub(super) fn all() -> Vec<Arc<dyn Plugin>> {
    vec![
        degradation_chamber(),
        instability_index_plugin(),
        test_function_plugin(),
        behavior_trainer(),
        performance(),
        steerable_generator(),
    ]
}

fn config_param() -> ParamSpec {
    ParamSpec::optional("config", ParamType::Path, None)
}

fn degradation_chamber() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("degradation-chamber", ModuleKind::Environment, BUILTIN_VERSION).method(
            MethodSpec::new("measure")
                .param(config_param())
                .param(ParamSpec::optional("horizon", ParamType::Number, Some(json!(100.0))))
                .param(ParamSpec::optional("dt", ParamType::Number, Some(json!(10.0))))
                .input(PortSpec::new("suggestions", DataKind::CandidateSet))
                .output(PortSpec::new("series", DataKind::Series)),
        ),
        vec![("measure", measure)],
    )
}

/// One photographed color series per suggested composition.
fn measure(c: &Call) -> Result<Out, String> {
    let cfg = c.config()?;
    let pts = c.points("suggestions")?;
    let mut rng = c.rng();
    let series = pts
        .iter()
        .map(|p| simulate_degradation(pair(p)?, c.num("horizon")?, c.num("dt")?, cfg.noise_sigma, cfg.c_star, &mut rng).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Out::new().put("series", json!({"points": pts, "series": series})))
}

fn instability_index_plugin() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("instability-index", ModuleKind::Modeling, BUILTIN_VERSION).method(
            MethodSpec::new("analyze")
                .input(PortSpec::new("series", DataKind::Series))
                .output(PortSpec::new("indices", DataKind::Record))
                .output(PortSpec::new("index", DataKind::Scalar)),
        ),
        vec![("analyze", analyze)],
    )
}

/// `indices` pairs every point with its I_c; `index` is the batch minimum.
fn analyze(c: &Call) -> Result<Out, String> {
    let v = c.need("series")?;
    let pts = points_of(v)?;
    let series: Vec<DegradationSeries> = serde_json::from_value(v.get("series").cloned().unwrap_or(Value::Null))
        .map_err(|e| format!("bad series: {e}"))?;
    if series.len() != pts.len() {
        return Err(format!("{} points but {} series", pts.len(), series.len()));
    }
    let values = series
        .iter()
        .map(|s| s.check().map(|_| instability_index(s)).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let least = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !least.is_finite() {
        return Err("no series to analyze".into());
    }
    Ok(Out::new()
        .put("indices", observations(&pts, &values))
        .put("index", json!(least)))
}

fn test_function_plugin() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("test-function", ModuleKind::Environment, BUILTIN_VERSION).method(
            MethodSpec::new("evaluate")
                .param(ParamSpec::optional(
                    "function",
                    ParamType::Enum {
                        values: vec!["branin".into(), "sphere".into(), "rastrigin".into()],
                    },
                    Some(json!("sphere")),
                ))
                .input(PortSpec::new("suggestions", DataKind::CandidateSet))
                .output(PortSpec::new("result", DataKind::Record)),
        ),
        vec![("evaluate", evaluate_test_function)],
    )
}

fn evaluate_test_function(c: &Call) -> Result<Out, String> {
    let f: TestFunction = c.text("function").unwrap_or("sphere").parse()?;
    let pts = c.points("suggestions")?;
    let values = pts
        .iter()
        .map(|p| test_function(f, p).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Out::new().put("result", observations(&pts, &values)))
}

fn design_of(c: &Call) -> Result<[f64; 2], String> {
    let pts = c.points("design")?;
    pair(pts.first().ok_or("design holds no point")?)
}

fn behavior_trainer() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("behavior-trainer", ModuleKind::Environment, BUILTIN_VERSION).method(
            MethodSpec::new("step")
                .input(PortSpec::new("design", DataKind::CandidateSet))
                .input(PortSpec::optional("state", DataKind::Record))
                .output(PortSpec::new("state", DataKind::Record))
                .output(PortSpec::new("theta", DataKind::Scalar)),
        ),
        vec![("step", train_step)],
    )
}

/// One hill-climbing evaluation. A state left by a different design is
/// discarded and the climber restarts.
fn train_step(c: &Call) -> Result<Out, String> {
    let d = design_of(c)?;
    let previous = match c.input("state") {
        Some(s) => {
            let design: [f64; 2] = serde_json::from_value(s.get("design").cloned().unwrap_or(Value::Null))
                .map_err(|e| format!("bad state design: {e}"))?;
            let climber: HillClimber = serde_json::from_value(s.get("climber").cloned().unwrap_or(Value::Null))
                .map_err(|e| format!("bad climber state: {e}"))?;
            (design == d).then_some(climber)
        }
        None => None,
    };
    let climber = match previous {
        Some(mut h) => {
            h.advance(d).map_err(|e| e.to_string())?;
            h
        }
        None => HillClimber::start(d, &mut c.rng()).map_err(|e| e.to_string())?,
    };
    Ok(Out::new()
        .put("theta", json!(climber.theta))
        .put("state", json!({"design": d, "climber": climber}))
        .diag("reward", climber.best)
        .diag("evaluations", f64::from(climber.evaluations)))
}

fn performance() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("performance", ModuleKind::Environment, BUILTIN_VERSION).method(
            MethodSpec::new("evaluate")
                .param(config_param())
                .input(PortSpec::new("design", DataKind::CandidateSet))
                .input(PortSpec::new("theta", DataKind::Scalar))
                .output(PortSpec::new("result", DataKind::Record)),
        ),
        vec![("evaluate", evaluate_performance)],
    )
}

/// Performance J of the design under the trained behavior.
fn evaluate_performance(c: &Call) -> Result<Out, String> {
    let cfg = c.config()?;
    let d = design_of(c)?;
    let theta = c.need("theta")?.as_f64().ok_or("theta is not a number")?;
    let r = reward(d, theta);
    let j = outer_performance(d, r, cfg.d_center);
    Ok(Out::new()
        .put("result", json!({"points": [d], "values": [j], "rewards": [r]}))
        .diag("J", j))
}

fn steerable_generator() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("steerable-generator", ModuleKind::Environment, BUILTIN_VERSION).method(
            MethodSpec::new("generate")
                .param(config_param())
                .param(ParamSpec::optional("n", ParamType::Integer, Some(json!(50))))
                .param(ParamSpec::optional("eta", ParamType::Number, None))
                .param(ParamSpec::optional("dim", ParamType::Integer, Some(json!(4))))
                .input(PortSpec::optional("prior", DataKind::ModelParams))
                .input(PortSpec::optional("scoring", DataKind::ModelParams))
                .input(PortSpec::optional("state", DataKind::Record))
                .output(PortSpec::new("candidates", DataKind::CandidateSet))
                .output(PortSpec::new("state", DataKind::Record)),
        ),
        vec![("generate", generate)],
    )
}

/// Steered by `scoring`, else `prior`, else a flat model of `dim`. The
/// step size is `eta` when given, else the simulator's.
fn generate(c: &Call) -> Result<Out, String> {
    let model = match c.input("scoring").or(c.input("prior")) {
        Some(m) => ScoringModel::from_json(m).map_err(|e| e.to_string())?,
        None => ScoringModel::zero(c.count("dim")?, 1.0),
    };
    let state = match c.input("state") {
        Some(s) => serde_json::from_value(s.clone()).map_err(|e| format!("bad generator state: {e}"))?,
        None => GeneratorState {
            mu: vec![0.0; model.w.len()],
        },
    };
    let eta = match c.opt_num("eta") {
        Some(e) => e,
        None => c.config()?.eta,
    };
    let (pts, next) = generate_candidates(&model, c.count("n")?, eta, &state, &mut c.rng()).map_err(|e| e.to_string())?;
    Ok(Out::new()
        .put("candidates", candidate_set(&pts))
        .put("state", serde_json::to_value(next).expect("state serializes")))
}
