//! The XML workflow description: parsing, validation against a plugin
//! registry, and canonical serialization.

mod model;
mod parse;
mod serialize;
pub mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::*;
pub use parse::parse_workflow;
pub(crate) use parse::is_valid_ident;
pub use serialize::serialize;

use crate::plugin::{DataKind, MethodSpec, PluginRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("malformed XML at {line}:{column}: {message}")]
    Malformed { line: u32, column: u32, message: String },
    #[error("schema error at line {line}: {message}")]
    Schema { line: u32, message: String },
    #[error("structural error: {0}")]
    Structural(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// Node id, loop id, `node.port` for a binding, or `workflow`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} [{}]: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ok={}", self.ok)?;
        for i in &self.issues {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Issues(Vec<Issue>);

impl Issues {
    fn error(&mut self, location: &str, message: impl Into<String>) {
        self.0.push(Issue {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, location: &str, message: impl Into<String>) {
        self.0.push(Issue {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Methods a node actually runs: its declared calls, or the plugin's first
/// method when none are declared.
pub fn effective_methods<'a>(node: &'a NodeSpec, methods: &'a [MethodSpec]) -> Vec<(&'a str, Option<&'a MethodSpec>)> {
    if node.methods.is_empty() {
        return methods.first().map(|m| vec![(m.name.as_str(), Some(m))]).unwrap_or_default();
    }
    node.methods
        .iter()
        .map(|c| (c.name.as_str(), methods.iter().find(|m| m.name == c.name)))
        .collect()
}

/// Port name under which a user-decision loop's verdict is stored.
pub fn decision_port(loop_id: &str) -> String {
    format!("decision-{loop_id}")
}

/// Check a parsed spec against the registry. Problems are reported, never thrown.
pub fn validate(spec: &WorkflowSpec, registry: &PluginRegistry) -> ValidationReport {
    let mut issues = Issues::default();

    let count = |k: ModuleKind| spec.nodes.iter().filter(|n| n.kind == k).count();
    match count(ModuleKind::Initialiser) {
        1 => {}
        n => issues.error("workflow", format!("expected exactly one Initialiser node, found {n}")),
    }
    if count(ModuleKind::Output) == 0 {
        issues.error("workflow", "expected at least one Output node");
    }
    let mut seen = BTreeSet::new();
    for n in &spec.nodes {
        if !seen.insert(&n.id) {
            issues.error(&n.id, "duplicate node id");
        }
        if !is_valid_ident(&n.id) {
            issues.error(&n.id, "invalid node id");
        }
    }

    // Output ports (with kinds) and input ports of every resolvable node.
    let mut outputs: BTreeMap<&str, BTreeMap<String, DataKind>> = BTreeMap::new();
    let mut inputs: BTreeMap<&str, BTreeMap<String, DataKind>> = BTreeMap::new();
    let mut required_inputs: BTreeSet<PortRef> = BTreeSet::new();
    for node in &spec.nodes {
        if node.methods.is_empty() && node.kind != ModuleKind::Output {
            issues.error(&node.id, "node declares no methods");
        }
        let Some(plugin) = registry.get(node.kind, &node.plugin) else {
            let kinds = registry.kinds_of(&node.plugin);
            if kinds.is_empty() {
                issues.error(&node.id, format!("unknown plugin '{}' for {}", node.plugin, node.kind));
            } else {
                let names: Vec<_> = kinds.iter().map(|k| k.as_str()).collect();
                issues.error(
                    &node.id,
                    format!(
                        "plugin kind mismatch: '{}' is a {} plugin, not {}",
                        node.plugin,
                        names.join("/"),
                        node.kind
                    ),
                );
            }
            continue;
        };
        let desc = plugin.descriptor();
        let methods = effective_methods(node, &desc.methods);
        if methods.is_empty() {
            issues.error(&node.id, format!("plugin '{}' has no default method", node.plugin));
        }
        let mut outs: BTreeMap<String, DataKind> = BTreeMap::new();
        let mut ins: BTreeMap<String, DataKind> = BTreeMap::new();
        let bound: BTreeSet<&str> = spec.inputs_of(&node.id).map(|b| b.target.port.as_str()).collect();
        let mut seen_methods = BTreeSet::new();
        for (i, (name, spec_m)) in methods.iter().enumerate() {
            let Some(m) = spec_m else {
                issues.error(&node.id, format!("plugin '{}' has no method '{name}'", node.plugin));
                continue;
            };
            if !seen_methods.insert(*name) {
                issues.error(&node.id, format!("method '{name}' called twice"));
            }
            let given = node.methods.get(i).map(|c| c.params.clone()).unwrap_or_default();
            if let Err(e) = m.resolve_text_params(&given) {
                issues.error(&node.id, format!("method '{name}': {e}"));
            }
            for p in &m.input_ports {
                if !p.optional && !bound.contains(p.name.as_str()) && !outs.contains_key(&p.name) {
                    issues.error(&node.id, format!("method '{name}': input '{}' is not bound", p.name));
                }
                ins.entry(p.name.clone()).or_insert(p.kind);
                if !p.optional {
                    required_inputs.insert(PortRef::new(&node.id, &p.name));
                }
            }
            for p in &m.output_ports {
                if outs.insert(p.name.clone(), p.kind).is_some() {
                    issues.error(&node.id, format!("output '{}' produced by more than one method", p.name));
                }
            }
            if let Some(inter) = &m.interaction {
                if i + 1 != methods.len() {
                    issues.error(&node.id, format!("interactive method '{name}' must be the node's last method"));
                }
                outs.insert(inter.answer_port.clone(), inter.kind.answer_kind());
            }
        }
        outputs.insert(&node.id, outs);
        inputs.insert(&node.id, ins);
    }

    let mut bound_ports = BTreeSet::new();
    for b in &spec.bindings {
        let loc = b.target.to_string();
        if spec.node(&b.target.node).is_none() {
            issues.error(&loc, "binding targets an unknown node");
            continue;
        }
        if !bound_ports.insert(&b.target) {
            issues.error(&loc, "input port bound more than once");
        }
        let target_kind = inputs.get(b.target.node.as_str()).map(|ins| ins.get(&b.target.port));
        if let Some(None) = target_kind {
            issues.error(&loc, format!("node '{}' has no input port '{}'", b.target.node, b.target.port));
        }
        match &b.source {
            BindingSource::Folder(f) => {
                if f.pattern.trim().is_empty() {
                    issues.error(&loc, "empty folder pattern");
                }
            }
            BindingSource::NodeOutput(src) => {
                if spec.node(&src.node).is_none() {
                    issues.error(&loc, format!("binding references unknown node '{}'", src.node));
                    continue;
                }
                let Some(outs) = outputs.get(src.node.as_str()) else { continue };
                match outs.get(&src.port) {
                    None => issues.error(&loc, format!("node '{}' has no output port '{}'", src.node, src.port)),
                    Some(sk) => {
                        if let Some(Some(tk)) = target_kind {
                            if *tk != *sk && *tk != DataKind::Record {
                                issues.error(
                                    &loc,
                                    format!("port kind mismatch: {} feeds a {} input", sk.as_str(), tk.as_str()),
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    let mut loop_ids = BTreeSet::new();
    for l in &spec.loops {
        if !loop_ids.insert(&l.id) {
            issues.error(&l.id, "duplicate loop id");
        }
        if l.body.is_empty() {
            issues.error(&l.id, "loop body is empty");
        }
        for n in &l.body {
            if spec.node(n).is_none() {
                issues.error(&l.id, format!("loop body names unknown node '{n}'"));
            }
        }
        if spec.node(&l.id).is_some() {
            issues.error(&l.id, "loop id collides with a node id");
        }
        match &l.condition {
            LoopCondition::MaxIterations { n } if *n < 1 => issues.error(&l.id, "n must be at least 1"),
            LoopCondition::MaxIterations { .. } => {}
            LoopCondition::PredicatePort { node, port, cap } => {
                if !l.contains(node) {
                    issues.error(&l.id, format!("predicate node '{node}' is outside the loop body"));
                }
                if let Some(outs) = outputs.get(node.as_str()) {
                    match outs.get(port) {
                        None => issues.error(&l.id, format!("node '{node}' has no output port '{port}'")),
                        Some(DataKind::Boolean) => {}
                        Some(k) => issues.error(&l.id, format!("predicate port is {}, not boolean", k.as_str())),
                    }
                }
                if cap.is_none() {
                    issues.warn(&l.id, "loop has no iteration cap");
                }
            }
            LoopCondition::UserDecision { timeout_s, cap, .. } => {
                if !(timeout_s.is_finite() && *timeout_s >= 0.0) {
                    issues.error(&l.id, "timeout-s must be a non-negative number");
                }
                if cap.is_none() {
                    issues.warn(&l.id, "loop has no iteration cap");
                }
            }
        }
        if matches!(l.condition.max_passes(), Some(0)) {
            issues.error(&l.id, "n must be at least 1");
        }
    }

    let structurally_sound = !issues.0.iter().any(|i| i.message.contains("unknown node"));
    if structurally_sound {
        match crate::engine::plan(spec) {
            Ok(_) => {
                let topo = topology::Topology::new(spec).expect("planned specs have a topology");
                for b in &spec.bindings {
                    if let Some(topology::EdgeKind::Back { loop_id }) = topo.edge_kind(b) {
                        if required_inputs.contains(&b.target) {
                            issues.error(
                                &b.target.to_string(),
                                format!("input fed from a later pass of loop '{loop_id}' must be optional"),
                            );
                        }
                    }
                }
            }
            Err(crate::engine::PlanError::Topology(m)) => {
                let loc = spec
                    .loops
                    .iter()
                    .find(|l| m.contains(&format!("'{}'", l.id)))
                    .map(|l| l.id.clone())
                    .unwrap_or_else(|| "workflow".into());
                issues.error(&loc, m);
            }
            Err(e @ crate::engine::PlanError::Cycle(_)) => issues.error("workflow", format!("binding {e}")),
        }
    }

    let ok = !issues.0.iter().any(|i| i.severity == Severity::Error);
    ValidationReport { ok, issues: issues.0 }
}
