//! The contract between the engine and the plugins that populate each module
//! kind: descriptors, method schemas, and invocation.

mod external;
mod registry;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dsl::ModuleKind;
use crate::iteration::IterationVector;

pub use external::{spawn_external, DescriptorExpectation, ExternalError, ExternalPlugin, HANDSHAKE_TIMEOUT};
pub use registry::{PluginRegistry, RegistryError};

/// Shape of the data travelling through a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Table,
    Vector,
    Scalar,
    Boolean,
    Series,
    CandidateSet,
    ModelParams,
    Decision,
    Label,
    /// Free-form structured JSON (problem context, summaries, optimizer state).
    Record,
}

impl DataKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DataKind::Table => "table",
            DataKind::Vector => "vector",
            DataKind::Scalar => "scalar",
            DataKind::Boolean => "boolean",
            DataKind::Series => "series",
            DataKind::CandidateSet => "candidate-set",
            DataKind::ModelParams => "model-params",
            DataKind::Decision => "decision",
            DataKind::Label => "label",
            DataKind::Record => "record",
        }
    }

    /// Structural check of a value against this kind.
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            DataKind::Scalar => v.is_number(),
            DataKind::Boolean => v.is_boolean(),
            DataKind::Label => matches!(v.as_u64(), Some(0 | 1)),
            DataKind::Vector => v.as_array().is_some_and(|a| a.iter().all(Value::is_number)),
            DataKind::Table => v.get("columns").is_some_and(Value::is_array) && v.get("rows").is_some_and(Value::is_array),
            DataKind::CandidateSet => v.get("points").is_some_and(Value::is_array),
            DataKind::Series => v.is_object(),
            DataKind::ModelParams => v.get("kind").is_some_and(Value::is_string),
            DataKind::Decision => v.is_string() || v.is_object(),
            DataKind::Record => v.is_object() || v.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamType {
    Number,
    Integer,
    Boolean,
    Text,
    /// Text naming a file; relative paths resolve against the workflow's directory.
    Path,
    Enum { values: Vec<String> },
}

impl ParamType {
    /// Type a parameter value written as document text.
    pub fn parse_text(&self, text: &str) -> Result<Value, String> {
        let t = text.trim();
        match self {
            ParamType::Number => t
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .and_then(|x| serde_json::Number::from_f64(x).map(Value::Number))
                .ok_or_else(|| format!("'{t}' is not a finite number")),
            ParamType::Integer => t
                .parse::<i64>()
                .map(Value::from)
                .map_err(|_| format!("'{t}' is not an integer")),
            ParamType::Boolean => match t {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("'{t}' is not true or false")),
            },
            ParamType::Text | ParamType::Path => Ok(Value::String(text.to_string())),
            ParamType::Enum { values } => {
                if values.iter().any(|v| v == t) {
                    Ok(Value::String(t.to_string()))
                } else {
                    Err(format!("'{t}' is not one of {values:?}"))
                }
            }
        }
    }

    /// Check a JSON value against this type.
    pub fn check(&self, v: &Value) -> Result<(), String> {
        let ok = match self {
            ParamType::Number => v.as_f64().is_some_and(f64::is_finite),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Text | ParamType::Path => v.is_string(),
            ParamType::Enum { values } => v.as_str().is_some_and(|s| values.iter().any(|x| x == s)),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{v} does not match {}", self.name()))
        }
    }

    pub fn name(&self) -> String {
        match self {
            ParamType::Number => "number".into(),
            ParamType::Integer => "integer".into(),
            ParamType::Boolean => "boolean".into(),
            ParamType::Text => "text".into(),
            ParamType::Path => "path".into(),
            ParamType::Enum { values } => format!("enum{values:?}"),
        }
    }

    /// Document text for a value of this type.
    pub fn render(v: &Value) -> String {
        match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default)]
    pub required: bool,
}

impl ParamSpec {
    pub fn optional(name: &str, ty: ParamType, default: Option<Value>) -> Self {
        ParamSpec {
            name: name.into(),
            ty,
            default,
            required: false,
        }
    }

    pub fn required(name: &str, ty: ParamType) -> Self {
        ParamSpec {
            name: name.into(),
            ty,
            default: None,
            required: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

impl PortSpec {
    pub fn new(name: &str, kind: DataKind) -> Self {
        PortSpec {
            name: name.into(),
            kind,
            optional: false,
        }
    }

    pub fn optional(name: &str, kind: DataKind) -> Self {
        PortSpec {
            name: name.into(),
            kind,
            optional: true,
        }
    }
}

/// The human decisions a run can wait on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionKind {
    ApproveSuggestions,
    EditConfig,
    TerminateDecision,
    LabelItem,
}

impl InteractionKind {
    pub fn answer_kind(self) -> DataKind {
        match self {
            InteractionKind::ApproveSuggestions => DataKind::CandidateSet,
            InteractionKind::EditConfig => DataKind::Record,
            InteractionKind::TerminateDecision => DataKind::Decision,
            InteractionKind::LabelItem => DataKind::Label,
        }
    }
}

/// Declares that a method hands its result to a human; the answer lands on
/// `answer_port`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kind: InteractionKind,
    pub answer_port: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub input_ports: Vec<PortSpec>,
    #[serde(default)]
    pub output_ports: Vec<PortSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionSpec>,
}

impl MethodSpec {
    pub fn new(name: &str) -> Self {
        MethodSpec {
            name: name.into(),
            params: Vec::new(),
            input_ports: Vec::new(),
            output_ports: Vec::new(),
            interaction: None,
        }
    }

    pub fn param(mut self, p: ParamSpec) -> Self {
        self.params.push(p);
        self
    }

    pub fn input(mut self, p: PortSpec) -> Self {
        self.input_ports.push(p);
        self
    }

    pub fn output(mut self, p: PortSpec) -> Self {
        self.output_ports.push(p);
        self
    }

    pub fn interactive(mut self, kind: InteractionKind, answer_port: &str) -> Self {
        self.interaction = Some(InteractionSpec {
            kind,
            answer_port: answer_port.into(),
        });
        self
    }

    pub fn param_spec(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Type the document's text parameters, filling defaults.
    pub fn resolve_text_params(&self, given: &BTreeMap<String, String>) -> Result<BTreeMap<String, Value>, String> {
        let mut typed = BTreeMap::new();
        for (k, text) in given {
            let spec = self
                .param_spec(k)
                .ok_or_else(|| format!("method '{}' has no parameter '{k}'", self.name))?;
            let v = spec.ty.parse_text(text).map_err(|e| format!("parameter '{k}': {e}"))?;
            typed.insert(k.clone(), v);
        }
        self.check_params(&typed)
    }

    /// Check typed parameters against the schema and fill defaults.
    pub fn check_params(&self, given: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, String> {
        for k in given.keys() {
            if self.param_spec(k).is_none() {
                return Err(format!("method '{}' has no parameter '{k}'", self.name));
            }
        }
        let mut out = BTreeMap::new();
        for p in &self.params {
            match given.get(&p.name) {
                Some(v) => {
                    p.ty.check(v).map_err(|e| format!("parameter '{}': {e}", p.name))?;
                    out.insert(p.name.clone(), v.clone());
                }
                None if p.required => {
                    return Err(format!("missing required parameter '{}'", p.name));
                }
                None => {
                    if let Some(d) = &p.default {
                        out.insert(p.name.clone(), d.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<(), String> {
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(&p.name) {
                return Err(format!("method '{}': duplicate parameter '{}'", self.name, p.name));
            }
            if p.required && p.default.is_some() {
                return Err(format!("method '{}': required parameter '{}' has a default", self.name, p.name));
            }
            if let Some(d) = &p.default {
                p.ty
                    .check(d)
                    .map_err(|e| format!("method '{}': default of '{}': {e}", self.name, p.name))?;
            }
        }
        for ports in [&self.input_ports, &self.output_ports] {
            let mut seen = BTreeSet::new();
            for port in ports {
                if !seen.insert(&port.name) {
                    return Err(format!("method '{}': duplicate port '{}'", self.name, port.name));
                }
            }
        }
        if let Some(i) = &self.interaction {
            if self.output_ports.iter().any(|p| p.name == i.answer_port) {
                return Err(format!("method '{}': answer port '{}' clashes with an output", self.name, i.answer_port));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginDescriptor {
    pub name: String,
    pub module_kind: ModuleKind,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_version")]
    pub version: String,
}

fn default_version() -> String {
    "0".to_string()
}

impl PluginDescriptor {
    pub fn new(name: &str, module_kind: ModuleKind, version: &str) -> Self {
        PluginDescriptor {
            name: name.into(),
            module_kind,
            methods: Vec::new(),
            version: version.into(),
        }
    }

    pub fn method(mut self, m: MethodSpec) -> Self {
        self.methods.push(m);
        self
    }

    pub fn method_spec(&self, name: &str) -> Option<&MethodSpec> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("plugin name is empty".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if !names.insert(&m.name) {
                return Err(format!("duplicate method '{}'", m.name));
            }
            m.validate()?;
        }
        Ok(())
    }

    /// Kind of an output port produced by any method (including answer ports).
    pub fn output_kind(&self, port: &str) -> Option<DataKind> {
        self.methods.iter().find_map(|m| {
            m.output_ports
                .iter()
                .find(|p| p.name == port)
                .map(|p| p.kind)
                .or_else(|| {
                    m.interaction
                        .as_ref()
                        .filter(|i| i.answer_port == port)
                        .map(|i| i.kind.answer_kind())
                })
        })
    }

    pub fn accepts_input(&self, port: &str) -> bool {
        self.methods.iter().any(|m| m.input_ports.iter().any(|p| p.name == port))
    }
}

/// One method call handed to a plugin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub plugin: String,
    pub method: String,
    pub params: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, Value>,
    pub rng_key: String,
    pub iteration: IterationVector,
    /// Where each input is stored, when it came from the datastore.
    #[serde(skip)]
    pub input_paths: BTreeMap<String, PathBuf>,
}

impl InvokeRequest {
    pub fn new(plugin: &str, method: &str) -> Self {
        InvokeRequest {
            plugin: plugin.into(),
            method: method.into(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            rng_key: String::new(),
            iteration: IterationVector::root(),
            input_paths: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.params.insert(k.into(), v.into());
        self
    }

    pub fn with_input(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.inputs.insert(k.into(), v.into());
        self
    }

    pub fn with_rng_key(mut self, key: impl Into<String>) -> Self {
        self.rng_key = key.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum InvokeStatus {
    Ok,
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagnostic {
    Number(f64),
    Text(String),
}

/// A request for a human decision returned by an interactive method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionProposal {
    pub prompt: String,
    /// Output ports shown to the human.
    pub payload_ports: Vec<String>,
    pub default_action: Value,
    pub timeout_s: Option<f64>,
    /// Answer supplied by a simulated responder; skips waiting entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated_answer: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeResult {
    #[serde(flatten)]
    pub status: InvokeStatus,
    #[serde(default)]
    pub outputs: BTreeMap<String, Value>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionProposal>,
}

impl InvokeResult {
    pub fn ok(outputs: BTreeMap<String, Value>) -> Self {
        InvokeResult {
            status: InvokeStatus::Ok,
            outputs,
            diagnostics: BTreeMap::new(),
            interaction: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        InvokeResult {
            status: InvokeStatus::Error {
                message: message.into(),
            },
            outputs: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            interaction: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.status, InvokeStatus::Ok)
    }

    pub fn error_message(&self) -> Option<&str> {
        match &self.status {
            InvokeStatus::Error { message } => Some(message),
            InvokeStatus::Ok => None,
        }
    }
}

/// A concrete implementation of a module kind's contract.
pub trait Plugin: Send + Sync {
    fn descriptor(&self) -> &PluginDescriptor;

    /// Run one method. Implementations report failures through the result;
    /// the registry also contains panics.
    fn invoke(&self, request: &InvokeRequest) -> InvokeResult;
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn param_text_typing() {
        assert_eq!(ParamType::Number.parse_text("0.5").unwrap(), json!(0.5));
        assert!(ParamType::Number.parse_text("nan").is_err());
        assert_eq!(ParamType::Integer.parse_text(" 3 ").unwrap(), json!(3));
        assert!(ParamType::Integer.parse_text("3.5").is_err());
        assert!(ParamType::Boolean.parse_text("yes").is_err());
        let e = ParamType::Enum {
            values: vec!["a".into(), "b".into()],
        };
        assert!(e.parse_text("c").is_err());
        assert_eq!(e.parse_text("b").unwrap(), json!("b"));
    }

    #[test]
    fn descriptor_validation() {
        let bad = PluginDescriptor::new("p", ModuleKind::Modeling, "1").method(
            MethodSpec::new("m").param(ParamSpec {
                name: "k".into(),
                ty: ParamType::Integer,
                default: Some(json!(1)),
                required: true,
            }),
        );
        assert!(bad.validate().is_err());
        let bad_enum = PluginDescriptor::new("p", ModuleKind::Modeling, "1").method(MethodSpec::new("m").param(
            ParamSpec::optional("k", ParamType::Enum { values: vec!["a".into()] }, Some(json!("z"))),
        ));
        assert!(bad_enum.validate().is_err());
        let dup = PluginDescriptor::new("p", ModuleKind::Modeling, "1")
            .method(MethodSpec::new("m"))
            .method(MethodSpec::new("m"));
        assert!(dup.validate().is_err());
    }

    #[test]
    fn check_params_fills_defaults_and_rejects_unknowns() {
        let m = MethodSpec::new("m")
            .param(ParamSpec::optional("a", ParamType::Number, Some(json!(1.5))))
            .param(ParamSpec::required("b", ParamType::Integer));
        let mut given = BTreeMap::new();
        assert!(m.check_params(&given).unwrap_err().contains("missing required"));
        given.insert("b".to_string(), json!(2));
        let out = m.check_params(&given).unwrap();
        assert_eq!(out["a"], json!(1.5));
        given.insert("zzz".to_string(), json!(2));
        assert!(m.check_params(&given).is_err());
    }

    #[test]
    fn data_kind_accepts() {
        assert!(DataKind::Label.accepts(&json!(1)));
        assert!(!DataKind::Label.accepts(&json!(2)));
        assert!(DataKind::Vector.accepts(&json!([0.2, 0.7])));
        assert!(!DataKind::Vector.accepts(&json!(["a"])));
        assert!(DataKind::Table.accepts(&json!({"columns": [], "rows": []})));
        assert!(DataKind::ModelParams.accepts(&json!({"kind": "gp"})));
    }
}
