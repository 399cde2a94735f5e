use std::sync::Arc;

use serde_json::json;

use super::learn::best_index;
use super::{candidate_set, maximizing, observations_of, sense_values, Call, FnPlugin, Out, BUILTIN_VERSION};
use crate::dsl::ModuleKind;
use crate::engine::TIMEOUT_PARAM;
use crate::plugin::{DataKind, InteractionKind, InteractionProposal, MethodSpec, ParamSpec, ParamType, Plugin, PluginDescriptor, PortSpec};
use crate::sim::synthetic_label;

pub(super) fn all() -> Vec<Arc<dyn Plugin>> {
    vec![progress_report(), suggestion_review(), config_review(), label_request()]
}

fn prompt_param(default: &str) -> ParamSpec {
    ParamSpec::optional("prompt", ParamType::Text, Some(json!(default)))
}

/// Seconds before the default applies; unset means the engine default.
fn timeout_param() -> ParamSpec {
    ParamSpec::optional(TIMEOUT_PARAM, ParamType::Number, None)
}

fn proposal(c: &Call, payload: &str, default_action: serde_json::Value) -> InteractionProposal {
    InteractionProposal {
        prompt: c.text("prompt").unwrap_or_default().to_string(),
        payload_ports: vec![payload.into()],
        default_action,
        timeout_s: c.opt_num(TIMEOUT_PARAM),
        simulated_answer: None,
    }
}

fn progress_report() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("progress-report", ModuleKind::UserInteraction, BUILTIN_VERSION).method(
            MethodSpec::new("summarize")
                .param(ParamSpec::optional("sense", sense_values(), Some(json!("minimize"))))
                .input(PortSpec::new("observations", DataKind::Record))
                .output(PortSpec::new("summary", DataKind::Record)),
        ),
        vec![("summarize", summarize)],
    )
}

/// Count and best observation so far, shown to whoever decides on the loop.
fn summarize(c: &Call) -> Result<Out, String> {
    let (pts, vals) = observations_of(c.need("observations")?)?;
    let best = best_index(&pts, &vals, maximizing(c));
    Ok(Out::new().put(
        "summary",
        json!({
            "count": pts.len(),
            "best_point": best.map(|i| &pts[i]),
            "best_value": best.map(|i| vals[i]),
        }),
    ))
}

fn suggestion_review() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("suggestion-review", ModuleKind::UserInteraction, BUILTIN_VERSION).method(
            MethodSpec::new("review")
                .param(prompt_param("Approve or edit the proposed experiments"))
                .param(timeout_param())
                .input(PortSpec::new("suggestions", DataKind::CandidateSet))
                .output(PortSpec::new("proposed", DataKind::CandidateSet))
                .interactive(InteractionKind::ApproveSuggestions, "approved"),
        ),
        vec![("review", review_suggestions)],
    )
}

/// Without an answer the proposal goes ahead unchanged.
fn review_suggestions(c: &Call) -> Result<Out, String> {
    let pts = c.points("suggestions")?;
    let p = proposal(c, "proposed", json!({"points": pts}));
    Ok(Out::new().put("proposed", candidate_set(&pts)).ask(p))
}

fn config_review() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("config-review", ModuleKind::UserInteraction, BUILTIN_VERSION).method(
            MethodSpec::new("review")
                .param(prompt_param("Edit node parameters for the next iteration"))
                .param(timeout_param())
                .input(PortSpec::optional("summary", DataKind::Record))
                .output(PortSpec::new("current", DataKind::Record))
                .interactive(InteractionKind::EditConfig, "edits"),
        ),
        vec![("review", review_config)],
    )
}

/// Without an answer nothing is edited.
fn review_config(c: &Call) -> Result<Out, String> {
    let current = c.input("summary").cloned().unwrap_or_else(|| json!({}));
    let p = proposal(c, "current", json!({"patches": []}));
    Ok(Out::new().put("current", current).ask(p))
}

fn label_request() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("label-request", ModuleKind::UserInteraction, BUILTIN_VERSION).method(
            MethodSpec::new("ask")
                .param(prompt_param("Is this candidate desirable? Answer 1 or 0"))
                .param(timeout_param())
                .param(ParamSpec::optional("simulate", ParamType::Boolean, Some(json!(false))))
                .param(ParamSpec::optional("config", ParamType::Path, None))
                .input(PortSpec::new("query", DataKind::CandidateSet))
                .output(PortSpec::new("item", DataKind::CandidateSet))
                .interactive(InteractionKind::LabelItem, "label"),
        ),
        vec![("ask", ask_label)],
    )
}

/// With `simulate` the hidden rule from the simulator config answers at
/// once; only the label leaves this function.
fn ask_label(c: &Call) -> Result<Out, String> {
    let pts = c.points("query")?;
    let x = pts.first().ok_or("query holds no point")?;
    let mut p = proposal(c, "item", json!(0));
    if c.flag("simulate") {
        let cfg = c.config()?;
        p.simulated_answer = Some(json!(synthetic_label(x, &cfg.w_star, cfg.b_star).map_err(|e| e.to_string())?));
    }
    Ok(Out::new().put("item", candidate_set(&pts)).ask(p))
}
