use std::collections::{BTreeMap, BTreeSet};

use roxmltree::{Document, Node};

use super::model::{
    BindingSource, DataBinding, FolderSource, LoopCondition, LoopSpec, MethodCall, ModuleKind, NodeSpec,
    PortRef, WorkflowSpec,
};
use super::DslError;

/// Parse a workflow document. Element order is preserved; unknown elements
/// and attributes are rejected.
pub fn parse_workflow(xml_text: &str) -> Result<WorkflowSpec, DslError> {
    let doc = Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        DslError::Malformed {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let p = Parser { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "workflow" {
        return Err(p.schema(root, format!("root element must be <workflow>, found <{}>", root.tag_name().name())));
    }
    p.check_attrs(root, &["name", "version", "seed"])?;
    let name = p.required(root, "name")?.to_string();
    let version = p.required(root, "version")?.to_string();
    let seed = match root.attribute("seed") {
        Some(s) if !s.trim().is_empty() => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| p.schema(root, format!("seed '{s}' is not an unsigned integer")))?,
        ),
        _ => None,
    };

    let mut nodes = Vec::new();
    let mut bindings = Vec::new();
    let mut loops = Vec::new();
    for child in p.element_children(root)? {
        match child.tag_name().name() {
            "node" => {
                let (node, mut inputs) = p.node(child)?;
                nodes.push(node);
                bindings.append(&mut inputs);
            }
            "loop" => loops.push(p.loop_spec(child)?),
            other => return Err(p.schema(child, format!("unknown element <{other}> in <workflow>"))),
        }
    }

    let spec = WorkflowSpec {
        name,
        version,
        seed,
        nodes,
        bindings,
        loops,
    };
    check_structure(&spec)?;
    Ok(spec)
}

/// Identifiers end up in directory names and iteration-vector renderings.
pub(crate) fn is_valid_ident(id: &str) -> bool {
    let mut chars = id.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn check_structure(spec: &WorkflowSpec) -> Result<(), DslError> {
    let mut ids = BTreeSet::new();
    for node in &spec.nodes {
        if !is_valid_ident(&node.id) {
            return Err(DslError::Structural(format!("invalid node id '{}'", node.id)));
        }
        if !ids.insert(node.id.as_str()) {
            return Err(DslError::Structural(format!("duplicate node id '{}'", node.id)));
        }
    }
    for b in &spec.bindings {
        if !is_valid_ident(&b.target.port) {
            return Err(DslError::Structural(format!("invalid port name '{}' on node '{}'", b.target.port, b.target.node)));
        }
        if let BindingSource::NodeOutput(src) = &b.source {
            if !ids.contains(src.node.as_str()) {
                return Err(DslError::Structural(format!(
                    "input '{}' references unknown node '{}'",
                    b.target, src.node
                )));
            }
            if !is_valid_ident(&src.port) {
                return Err(DslError::Structural(format!("invalid port name '{}'", src.port)));
            }
        }
    }
    let mut loop_ids = BTreeSet::new();
    for l in &spec.loops {
        if !is_valid_ident(&l.id) {
            return Err(DslError::Structural(format!("invalid loop id '{}'", l.id)));
        }
        if !loop_ids.insert(l.id.as_str()) {
            return Err(DslError::Structural(format!("duplicate loop id '{}'", l.id)));
        }
        if l.body.is_empty() {
            return Err(DslError::Structural(format!("loop '{}' has an empty body", l.id)));
        }
        let mut seen = BTreeSet::new();
        for n in &l.body {
            if !ids.contains(n.as_str()) {
                return Err(DslError::Structural(format!("loop '{}' body names unknown node '{}'", l.id, n)));
            }
            if !seen.insert(n.as_str()) {
                return Err(DslError::Structural(format!("loop '{}' lists node '{}' twice", l.id, n)));
            }
        }
        match &l.condition {
            LoopCondition::MaxIterations { n } if *n == 0 => {
                return Err(DslError::Structural(format!("loop '{}': n must be at least 1", l.id)));
            }
            LoopCondition::PredicatePort { node, cap, .. } => {
                if !l.contains(node) {
                    return Err(DslError::Structural(format!(
                        "loop '{}': predicate node '{}' is not in the loop body",
                        l.id, node
                    )));
                }
                if *cap == Some(0) {
                    return Err(DslError::Structural(format!("loop '{}': n must be at least 1", l.id)));
                }
            }
            LoopCondition::UserDecision { timeout_s, cap, .. } => {
                if !(timeout_s.is_finite() && *timeout_s >= 0.0) {
                    return Err(DslError::Structural(format!("loop '{}': timeout-s must be non-negative", l.id)));
                }
                if *cap == Some(0) {
                    return Err(DslError::Structural(format!("loop '{}': n must be at least 1", l.id)));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

struct Parser<'a, 'input> {
    doc: &'a Document<'input>,
}

impl<'a, 'input> Parser<'a, 'input> {
    fn line(&self, node: Node) -> u32 {
        self.doc.text_pos_at(node.range().start).row
    }

    fn schema(&self, node: Node, message: String) -> DslError {
        DslError::Schema {
            line: self.line(node),
            message,
        }
    }

    fn check_attrs(&self, node: Node, allowed: &[&str]) -> Result<(), DslError> {
        for attr in node.attributes() {
            if !allowed.contains(&attr.name()) {
                return Err(self.schema(
                    node,
                    format!("unknown attribute '{}' on <{}>", attr.name(), node.tag_name().name()),
                ));
            }
        }
        Ok(())
    }

    fn required<'n>(&self, node: Node<'n, 'input>, name: &str) -> Result<&'n str, DslError> {
        node.attribute(name).ok_or_else(|| {
            self.schema(
                node,
                format!("<{}> is missing required attribute '{}'", node.tag_name().name(), name),
            )
        })
    }

    /// Element children; stray text is an error, comments are ignored.
    fn element_children<'n>(&self, node: Node<'n, 'input>) -> Result<Vec<Node<'n, 'input>>, DslError> {
        let mut out = Vec::new();
        for child in node.children() {
            if child.is_element() {
                out.push(child);
            } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
                return Err(self.schema(
                    child,
                    format!("unexpected text inside <{}>", node.tag_name().name()),
                ));
            }
        }
        Ok(out)
    }

    fn node(&self, el: Node<'_, 'input>) -> Result<(NodeSpec, Vec<DataBinding>), DslError> {
        self.check_attrs(el, &["id", "kind", "plugin"])?;
        let id = self.required(el, "id")?.to_string();
        let kind_text = self.required(el, "kind")?;
        let kind: ModuleKind = kind_text.parse().map_err(|e: String| self.schema(el, e))?;
        let plugin = self.required(el, "plugin")?.to_string();
        let mut methods = Vec::new();
        let mut inputs = Vec::new();
        for child in self.element_children(el)? {
            match child.tag_name().name() {
                "method" => methods.push(self.method(child)?),
                "input" => inputs.push(self.input(child, &id)?),
                other => return Err(self.schema(child, format!("unknown element <{other}> in <node>"))),
            }
        }
        Ok((NodeSpec { id, kind, plugin, methods }, inputs))
    }

    fn method(&self, el: Node<'_, 'input>) -> Result<MethodCall, DslError> {
        self.check_attrs(el, &["name"])?;
        let name = self.required(el, "name")?.to_string();
        let mut params = BTreeMap::new();
        for child in self.element_children(el)? {
            if child.tag_name().name() != "param" {
                return Err(self.schema(child, format!("unknown element <{}> in <method>", child.tag_name().name())));
            }
            self.check_attrs(child, &["name"])?;
            let pname = self.required(child, "name")?.to_string();
            let mut value = String::new();
            for t in child.children() {
                if t.is_element() {
                    return Err(self.schema(t, "<param> may only contain text".to_string()));
                }
                if let Some(text) = t.text() {
                    value.push_str(text);
                }
            }
            if params.insert(pname.clone(), value.trim().to_string()).is_some() {
                return Err(self.schema(child, format!("duplicate param '{pname}' in method '{name}'")));
            }
        }
        Ok(MethodCall { name, params })
    }

    fn input(&self, el: Node<'_, 'input>, node_id: &str) -> Result<DataBinding, DslError> {
        self.check_attrs(el, &["port", "from-node", "from-port", "folder", "pattern", "format"])?;
        if let Some(child) = self.element_children(el)?.first() {
            return Err(self.schema(*child, "<input> must be empty".to_string()));
        }
        let port = self.required(el, "port")?.to_string();
        let has_node = el.has_attribute("from-node") || el.has_attribute("from-port");
        let has_folder = el.has_attribute("folder") || el.has_attribute("pattern") || el.has_attribute("format");
        let source = match (has_node, has_folder) {
            (true, false) => BindingSource::NodeOutput(PortRef::new(
                self.required(el, "from-node")?,
                self.required(el, "from-port")?,
            )),
            (false, true) => {
                let format_text = self.required(el, "format")?;
                BindingSource::Folder(FolderSource {
                    path: self.required(el, "folder")?.to_string(),
                    pattern: self.required(el, "pattern")?.to_string(),
                    format: format_text.parse().map_err(|e: String| self.schema(el, e))?,
                })
            }
            _ => {
                return Err(self.schema(
                    el,
                    format!("input '{port}' must set exactly one of from-node/from-port or folder/pattern/format"),
                ))
            }
        };
        Ok(DataBinding {
            target: PortRef::new(node_id, port),
            source,
        })
    }

    fn loop_spec(&self, el: Node<'_, 'input>) -> Result<LoopSpec, DslError> {
        let condition_text = self.required(el, "condition")?;
        let allowed: &[&str] = match condition_text {
            "max-iterations" => &["id", "condition", "n"],
            "predicate-port" => &["id", "condition", "node", "port", "n"],
            "user-decision" => &["id", "condition", "prompt", "default", "timeout-s", "n"],
            other => return Err(self.schema(el, format!("unknown loop condition '{other}'"))),
        };
        self.check_attrs(el, allowed)?;
        let id = self.required(el, "id")?.to_string();
        let parse_n = |text: &str| -> Result<u32, DslError> {
            text.trim()
                .parse::<u32>()
                .map_err(|_| self.schema(el, format!("loop '{id}': n='{text}' is not a non-negative integer")))
        };
        let cap = el.attribute("n").map(parse_n).transpose()?;
        let condition = match condition_text {
            "max-iterations" => LoopCondition::MaxIterations {
                n: parse_n(self.required(el, "n")?)?,
            },
            "predicate-port" => LoopCondition::PredicatePort {
                node: self.required(el, "node")?.to_string(),
                port: self.required(el, "port")?.to_string(),
                cap,
            },
            _ => {
                let timeout_text = self.required(el, "timeout-s")?;
                LoopCondition::UserDecision {
                    prompt: self.required(el, "prompt")?.to_string(),
                    default: self
                        .required(el, "default")?
                        .parse()
                        .map_err(|e: String| self.schema(el, format!("loop '{id}': {e}")))?,
                    timeout_s: timeout_text
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| self.schema(el, format!("loop '{id}': timeout-s '{timeout_text}' is not a number")))?,
                    cap,
                }
            }
        };
        let mut body = Vec::new();
        for child in self.element_children(el)? {
            if child.tag_name().name() != "body" {
                return Err(self.schema(child, format!("unknown element <{}> in <loop>", child.tag_name().name())));
            }
            self.check_attrs(child, &["node"])?;
            body.push(self.required(child, "node")?.to_string());
        }
        Ok(LoopSpec { id, body, condition })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<workflow name="minimal" version="1">
  <node id="init" kind="Initialiser" plugin="feature-space"><method name="define"/></node>
  <node id="out" kind="Output" plugin="report"/>
</workflow>"#;

    #[test]
    fn minimal_document() {
        let spec = parse_workflow(MINIMAL).unwrap();
        assert_eq!(spec.nodes.len(), 2);
        assert!(spec.loops.is_empty());
        assert_eq!(spec.seed, None);
        assert_eq!(spec.nodes[0].kind, ModuleKind::Initialiser);
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_workflow("<workflow name=\"x\" version=\"1\">\n  <node id=\"a\"\n</workflow>").unwrap_err();
        match err {
            DslError::Malformed { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_element_and_attribute_are_named() {
        let err = parse_workflow(r#"<workflow name="x" version="1"><gizmo/></workflow>"#).unwrap_err();
        assert!(err.to_string().contains("gizmo"), "{err}");
        let err = parse_workflow(r#"<workflow name="x" version="1" colour="red"/>"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn duplicate_node_id_is_structural() {
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"/><node id="a" kind="Output" plugin="q"/></workflow>"#;
        assert!(matches!(parse_workflow(xml), Err(DslError::Structural(m)) if m.contains("'a'")));
    }

    #[test]
    fn loop_body_with_unknown_node() {
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"/>
            <loop id="l" condition="max-iterations" n="2"><body node="ghost"/></loop></workflow>"#;
        let err = parse_workflow(xml).unwrap_err();
        assert!(matches!(&err, DslError::Structural(m) if m.contains("ghost")), "{err}");
    }

    #[test]
    fn condition_attributes_are_checked() {
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"/>
            <loop id="l" condition="max-iterations" n="2" prompt="?"><body node="a"/></loop></workflow>"#;
        assert!(matches!(parse_workflow(xml), Err(DslError::Schema { .. })));
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"/>
            <loop id="l" condition="max-iterations" n="0"><body node="a"/></loop></workflow>"#;
        assert!(matches!(parse_workflow(xml), Err(DslError::Structural(_))));
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"/>
            <loop id="l" condition="user-decision" prompt="go?" default="maybe" timeout-s="1"><body node="a"/></loop></workflow>"#;
        assert!(parse_workflow(xml).is_err());
    }

    #[test]
    fn mixed_input_source_rejected() {
        let xml = r#"<workflow name="x" version="1">
            <node id="a" kind="Initialiser" plugin="p"><input port="d" from-node="a" folder="data"/></node></workflow>"#;
        assert!(matches!(parse_workflow(xml), Err(DslError::Schema { .. })));
    }

    #[test]
    fn params_and_inputs_are_collected() {
        let xml = r#"<workflow name="x" version="2" seed="9">
            <node id="a" kind="Initialiser" plugin="dataset-loader">
              <method name="load"><param name="k"> 3 </param></method>
              <input port="data" folder="data" pattern="*.csv" format="csv"/>
            </node>
            <node id="b" kind="Output" plugin="report"><input port="x" from-node="a" from-port="dataset"/></node>
          </workflow>"#;
        let spec = parse_workflow(xml).unwrap();
        assert_eq!(spec.seed, Some(9));
        assert_eq!(spec.nodes[0].methods[0].params["k"], "3");
        assert_eq!(spec.bindings.len(), 2);
        assert!(matches!(&spec.bindings[0].source, BindingSource::Folder(f) if f.pattern == "*.csv"));
        assert_eq!(spec.bindings[1].source_node().unwrap(), &PortRef::new("a", "dataset"));
    }
}
