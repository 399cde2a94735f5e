use std::sync::Arc;

use serde_json::json;

use super::learn::{best_index, predict_original};
use super::{maximizing, observations_of, sense_values, Call, FnPlugin, Out, BUILTIN_VERSION};
use crate::dsl::ModuleKind;
use crate::plugin::{DataKind, MethodSpec, ParamSpec, ParamType, Plugin, PluginDescriptor, PortSpec};

pub(super) fn all() -> Vec<Arc<dyn Plugin>> {
    vec![recommendation(), report()]
}

fn recommendation() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("recommendation", ModuleKind::Output, BUILTIN_VERSION).method(
            MethodSpec::new("recommend")
                .param(ParamSpec::optional("sense", sense_values(), Some(json!("minimize"))))
                .param(ParamSpec::optional(
                    "mode",
                    ParamType::Enum {
                        values: vec!["best-observed".into(), "posterior-mean".into()],
                    },
                    Some(json!("best-observed")),
                ))
                .input(PortSpec::new("observations", DataKind::Record))
                .input(PortSpec::optional("model", DataKind::ModelParams))
                .input(PortSpec::optional("candidates", DataKind::CandidateSet))
                .output(PortSpec::new("best", DataKind::Record)),
        ),
        vec![("recommend", recommend)],
    )
}

/// `best-observed` picks among the observations; `posterior-mean` picks the
/// candidate with the best predicted mean.
fn recommend(c: &Call) -> Result<Out, String> {
    let max = maximizing(c);
    let (pts, vals, source) = if c.text("mode") == Some("posterior-mean") {
        let model = c.input("model").ok_or("posterior-mean needs a model")?;
        let pts = c.points("candidates")?;
        let (mean, _) = predict_original(model, &pts)?;
        (pts, mean, "posterior-mean")
    } else {
        let (p, v) = observations_of(c.need("observations")?)?;
        (p, v, "best-observed")
    };
    let i = best_index(&pts, &vals, max).ok_or("nothing to recommend")?;
    Ok(Out::new()
        .put("best", json!({"point": pts[i], "value": vals[i], "source": source}))
        .diag("value", vals[i]))
}

fn report() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("report", ModuleKind::Output, BUILTIN_VERSION).method(
            MethodSpec::new("write")
                .param(ParamSpec::optional("title", ParamType::Text, Some(json!("Result"))))
                .input(PortSpec::new("data", DataKind::Record))
                .output(PortSpec::new("report", DataKind::Record)),
        ),
        vec![("write", write_report)],
    )
}

fn write_report(c: &Call) -> Result<Out, String> {
    let title = c.text("title").unwrap_or("Result");
    Ok(Out::new().put("report", json!({"title": title, "data": c.need("data")?})))
}
