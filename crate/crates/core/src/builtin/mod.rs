//! Plugins shipped with the engine. Every builtin is a table of plain
//! functions over JSON values; shapes shared between plugins:
//!
//! * candidate set: `{"points": [[..], ..]}`
//! * observations: `{"points": [[..], ..], "values": [..]}`
//! * labeled pool: `{"points": [[..], ..], "labels": [0|1, ..]}`

mod data;
mod human;
mod learn;
mod output;
mod simenv;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::plugin::{Diagnostic, InteractionProposal, InvokeRequest, InvokeResult, InvokeStatus, Plugin, PluginDescriptor, PluginRegistry};
use crate::rng::{rng_from_key, StreamRng};
use crate::sim::SimulatorConfig;

pub use data::{binarizer, standardizer};

/// Version stamped on every builtin descriptor.
pub const BUILTIN_VERSION: &str = env!("CARGO_PKG_VERSION");

type Method = fn(&Call) -> Result<Out, String>;

/// A descriptor plus one function per declared method.
pub struct FnPlugin {
    desc: PluginDescriptor,
    methods: Vec<(&'static str, Method)>,
}

impl FnPlugin {
    fn new(desc: PluginDescriptor, methods: Vec<(&'static str, Method)>) -> Arc<dyn Plugin> {
        debug_assert_eq!(desc.methods.len(), methods.len());
        Arc::new(FnPlugin { desc, methods })
    }
}

impl Plugin for FnPlugin {
    fn descriptor(&self) -> &PluginDescriptor {
        &self.desc
    }

    fn invoke(&self, req: &InvokeRequest) -> InvokeResult {
        let Some((_, f)) = self.methods.iter().find(|(m, _)| *m == req.method) else {
            return InvokeResult::error(format!("plugin '{}' has no method '{}'", self.desc.name, req.method));
        };
        match f(&Call { req }) {
            Ok(out) => InvokeResult {
                status: InvokeStatus::Ok,
                outputs: out.outputs,
                diagnostics: out.diagnostics,
                interaction: out.interaction,
            },
            Err(e) => InvokeResult::error(e),
        }
    }
}

/// Every builtin plugin.
pub fn plugins() -> Vec<Arc<dyn Plugin>> {
    let mut all = Vec::new();
    all.extend(data::all());
    all.extend(learn::all());
    all.extend(simenv::all());
    all.extend(human::all());
    all.extend(output::all());
    all
}

/// A registry holding every builtin plugin.
pub fn with_builtins() -> PluginRegistry {
    let mut r = PluginRegistry::new();
    for p in plugins() {
        r.register(p).expect("builtin descriptors are valid and distinct");
    }
    r
}

/// Read-side view of one request. Parameters arrive with defaults filled.
pub(crate) struct Call<'a> {
    req: &'a InvokeRequest,
}

impl Call<'_> {
    fn param(&self, k: &str) -> Option<&Value> {
        self.req.params.get(k)
    }

    fn num(&self, k: &str) -> Result<f64, String> {
        self.param(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("parameter '{k}' is not set"))
    }

    fn opt_num(&self, k: &str) -> Option<f64> {
        self.param(k).and_then(Value::as_f64)
    }

    fn count(&self, k: &str) -> Result<usize, String> {
        let v = self
            .param(k)
            .and_then(Value::as_i64)
            .ok_or_else(|| format!("parameter '{k}' is not set"))?;
        usize::try_from(v).map_err(|_| format!("parameter '{k}' must not be negative"))
    }

    fn flag(&self, k: &str) -> bool {
        self.param(k).and_then(Value::as_bool).unwrap_or(false)
    }

    fn text(&self, k: &str) -> Option<&str> {
        self.param(k).and_then(Value::as_str).filter(|s| !s.is_empty())
    }

    fn input(&self, k: &str) -> Option<&Value> {
        self.req.inputs.get(k)
    }

    fn need(&self, k: &str) -> Result<&Value, String> {
        self.input(k).ok_or_else(|| format!("missing input '{k}'"))
    }

    fn points(&self, k: &str) -> Result<Vec<Vec<f64>>, String> {
        points_of(self.need(k)?).map_err(|e| format!("input '{k}': {e}"))
    }

    /// Points of an optional input; empty when absent.
    fn opt_points(&self, k: &str) -> Result<Vec<Vec<f64>>, String> {
        match self.input(k) {
            Some(v) => points_of(v).map_err(|e| format!("input '{k}': {e}")),
            None => Ok(Vec::new()),
        }
    }

    fn rng(&self) -> StreamRng {
        rng_from_key(&self.req.rng_key)
    }

    /// Simulator ground truth from the `config` path, or the defaults.
    fn config(&self) -> Result<SimulatorConfig, String> {
        match self.text("config") {
            Some(p) => SimulatorConfig::load(Path::new(p)),
            None => Ok(SimulatorConfig::default()),
        }
    }
}

#[derive(Default)]
pub(crate) struct Out {
    outputs: BTreeMap<String, Value>,
    diagnostics: BTreeMap<String, Diagnostic>,
    interaction: Option<InteractionProposal>,
}

impl Out {
    fn new() -> Out {
        Out::default()
    }

    fn put(mut self, port: &str, v: Value) -> Out {
        self.outputs.insert(port.into(), v);
        self
    }

    fn diag(mut self, k: &str, v: f64) -> Out {
        self.diagnostics.insert(k.into(), Diagnostic::Number(v));
        self
    }

    fn ask(mut self, p: InteractionProposal) -> Out {
        self.interaction = Some(p);
        self
    }
}

fn points_of(v: &Value) -> Result<Vec<Vec<f64>>, String> {
    let pts: Vec<Vec<f64>> = serde_json::from_value(v.get("points").cloned().unwrap_or(Value::Null))
        .map_err(|e| format!("bad points: {e}"))?;
    if pts.iter().flatten().any(|x| !x.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(pts)
}

fn candidate_set(points: &[Vec<f64>]) -> Value {
    json!({ "points": points })
}

/// Points and values of an observations record; lengths must agree.
fn observations_of(v: &Value) -> Result<(Vec<Vec<f64>>, Vec<f64>), String> {
    let pts = points_of(v)?;
    let vals: Vec<f64> = serde_json::from_value(v.get("values").cloned().unwrap_or(Value::Null))
        .map_err(|e| format!("bad values: {e}"))?;
    if pts.len() != vals.len() {
        return Err(format!("{} points but {} values", pts.len(), vals.len()));
    }
    Ok((pts, vals))
}

fn observations(points: &[Vec<f64>], values: &[f64]) -> Value {
    json!({ "points": points, "values": values })
}

fn pair(p: &[f64]) -> Result<[f64; 2], String> {
    match p {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected a 2-d point, got dimension {}", p.len())),
    }
}

fn sense_values() -> crate::plugin::ParamType {
    crate::plugin::ParamType::Enum {
        values: vec!["minimize".into(), "maximize".into()],
    }
}

fn maximizing(c: &Call) -> bool {
    c.text("sense") == Some("maximize")
}
