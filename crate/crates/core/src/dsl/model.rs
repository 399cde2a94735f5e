use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The seven node categories a workflow is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleKind {
    Initialiser,
    DataProcessing,
    DecisionMaking,
    Environment,
    Modeling,
    UserInteraction,
    Output,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 7] = [
        ModuleKind::Initialiser,
        ModuleKind::DataProcessing,
        ModuleKind::DecisionMaking,
        ModuleKind::Environment,
        ModuleKind::Modeling,
        ModuleKind::UserInteraction,
        ModuleKind::Output,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Initialiser => "Initialiser",
            ModuleKind::DataProcessing => "DataProcessing",
            ModuleKind::DecisionMaking => "DecisionMaking",
            ModuleKind::Environment => "Environment",
            ModuleKind::Modeling => "Modeling",
            ModuleKind::UserInteraction => "UserInteraction",
            ModuleKind::Output => "Output",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModuleKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown module kind '{s}'"))
    }
}

/// A parsed workflow document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub name: String,
    pub version: String,
    pub seed: Option<u64>,
    pub nodes: Vec<NodeSpec>,
    pub bindings: Vec<DataBinding>,
    pub loops: Vec<LoopSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: ModuleKind,
    pub plugin: String,
    pub methods: Vec<MethodCall>,
}

/// One method invocation on a node's plugin. Parameter values are kept as
/// written in the document and typed against the plugin schema later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCall {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

impl PortRef {
    pub fn new(node: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Json => "json",
        }
    }
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FolderSource {
    pub path: String,
    pub pattern: String,
    pub format: DataFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BindingSource {
    Folder(FolderSource),
    NodeOutput(PortRef),
}

/// Feeds one input port of a node from a folder or from another node's output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataBinding {
    pub target: PortRef,
    pub source: BindingSource,
}

impl DataBinding {
    pub fn source_node(&self) -> Option<&PortRef> {
        match &self.source {
            BindingSource::NodeOutput(p) => Some(p),
            BindingSource::Folder(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Stop,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Continue => "continue",
            Decision::Stop => "stop",
        }
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continue" => Ok(Decision::Continue),
            "stop" => Ok(Decision::Stop),
            other => Err(format!("expected continue or stop, got '{other}'")),
        }
    }
}

/// When a loop body repeats. `cap` bounds the number of passes for the
/// open-ended conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum LoopCondition {
    MaxIterations {
        n: u32,
    },
    PredicatePort {
        node: String,
        port: String,
        cap: Option<u32>,
    },
    UserDecision {
        prompt: String,
        default: Decision,
        timeout_s: f64,
        cap: Option<u32>,
    },
}

impl LoopCondition {
    pub fn tag(&self) -> &'static str {
        match self {
            LoopCondition::MaxIterations { .. } => "max-iterations",
            LoopCondition::PredicatePort { .. } => "predicate-port",
            LoopCondition::UserDecision { .. } => "user-decision",
        }
    }

    /// Upper bound on passes, if any.
    pub fn max_passes(&self) -> Option<u32> {
        match self {
            LoopCondition::MaxIterations { n } => Some(*n),
            LoopCondition::PredicatePort { cap, .. } | LoopCondition::UserDecision { cap, .. } => *cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub id: String,
    pub body: Vec<String>,
    pub condition: LoopCondition,
}

impl LoopSpec {
    pub fn contains(&self, node: &str) -> bool {
        self.body.iter().any(|n| n == node)
    }
}

impl WorkflowSpec {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn loop_spec(&self, id: &str) -> Option<&LoopSpec> {
        self.loops.iter().find(|l| l.id == id)
    }

    /// Bindings feeding `node`, in declaration order.
    pub fn inputs_of<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a DataBinding> + 'a {
        self.bindings.iter().filter(move |b| b.target.node == node)
    }

    /// Canonical form: bindings grouped by target node in document order and
    /// sorted by port; loop bodies listed in node document order.
    pub fn normalize(&self) -> WorkflowSpec {
        let mut out = self.clone();
        let order = |id: &str| self.node_index(id).unwrap_or(usize::MAX);
        out.bindings
            .sort_by(|a, b| (order(&a.target.node), &a.target.port).cmp(&(order(&b.target.node), &b.target.port)));
        for l in &mut out.loops {
            l.body.sort_by_key(|id| order(id));
            l.body.dedup();
        }
        out
    }
}
