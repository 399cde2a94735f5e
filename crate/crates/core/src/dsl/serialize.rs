use std::fmt::Write;

use super::model::{BindingSource, LoopCondition, WorkflowSpec};

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn attrs(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!(" {k}=\"{}\"", escape(v)))
        .collect()
}

/// Canonical XML: fixed attribute order, bindings sorted by port within each
/// node, two-space indentation, trailing newline.
pub fn serialize(spec: &WorkflowSpec) -> String {
    let spec = spec.normalize();
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let mut root = vec![("name", spec.name.clone()), ("version", spec.version.clone())];
    if let Some(seed) = spec.seed {
        root.push(("seed", seed.to_string()));
    }
    let _ = writeln!(out, "<workflow{}>", attrs(&root));

    for node in &spec.nodes {
        let head = attrs(&[
            ("id", node.id.clone()),
            ("kind", node.kind.as_str().to_string()),
            ("plugin", node.plugin.clone()),
        ]);
        let inputs: Vec<_> = spec.inputs_of(&node.id).collect();
        if node.methods.is_empty() && inputs.is_empty() {
            let _ = writeln!(out, "  <node{head}/>");
            continue;
        }
        let _ = writeln!(out, "  <node{head}>");
        for m in &node.methods {
            let name = attrs(&[("name", m.name.clone())]);
            if m.params.is_empty() {
                let _ = writeln!(out, "    <method{name}/>");
            } else {
                let _ = writeln!(out, "    <method{name}>");
                for (k, v) in &m.params {
                    let _ = writeln!(out, "      <param{}>{}</param>", attrs(&[("name", k.clone())]), escape(v));
                }
                let _ = writeln!(out, "    </method>");
            }
        }
        for b in inputs {
            let mut a = vec![("port", b.target.port.clone())];
            match &b.source {
                BindingSource::NodeOutput(src) => {
                    a.push(("from-node", src.node.clone()));
                    a.push(("from-port", src.port.clone()));
                }
                BindingSource::Folder(f) => {
                    a.push(("folder", f.path.clone()));
                    a.push(("pattern", f.pattern.clone()));
                    a.push(("format", f.format.as_str().to_string()));
                }
            }
            let _ = writeln!(out, "    <input{}/>", attrs(&a));
        }
        let _ = writeln!(out, "  </node>");
    }

    for l in &spec.loops {
        let mut a = vec![("id", l.id.clone()), ("condition", l.condition.tag().to_string())];
        match &l.condition {
            LoopCondition::MaxIterations { n } => a.push(("n", n.to_string())),
            LoopCondition::PredicatePort { node, port, cap } => {
                a.push(("node", node.clone()));
                a.push(("port", port.clone()));
                if let Some(cap) = cap {
                    a.push(("n", cap.to_string()));
                }
            }
            LoopCondition::UserDecision {
                prompt,
                default,
                timeout_s,
                cap,
            } => {
                a.push(("prompt", prompt.clone()));
                a.push(("default", default.as_str().to_string()));
                a.push(("timeout-s", timeout_s.to_string()));
                if let Some(cap) = cap {
                    a.push(("n", cap.to_string()));
                }
            }
        }
        let _ = writeln!(out, "  <loop{}>", attrs(&a));
        for n in &l.body {
            let _ = writeln!(out, "    <body{}/>", attrs(&[("node", n.clone())]));
        }
        let _ = writeln!(out, "  </loop>");
    }
    out.push_str("</workflow>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_workflow;

    const TWO_ORDERS: [&str; 2] = [
        r#"<workflow name="w" version="1">
  <node id="a" kind="Initialiser" plugin="p"><method name="m"/></node>
  <node id="b" kind="Output" plugin="q">
    <input port="y" from-node="a" from-port="o2"/>
    <input port="x" from-node="a" from-port="o1"/>
  </node>
</workflow>"#,
        r#"<workflow name="w" version="1">
  <node id="a" kind="Initialiser" plugin="p"><method name="m"/></node>
  <node id="b" kind="Output" plugin="q">
    <input port="x" from-node="a" from-port="o1"/>
    <input port="y" from-node="a" from-port="o2"/>
  </node>
</workflow>"#,
    ];

    #[test]
    fn binding_order_does_not_change_bytes() {
        let a = serialize(&parse_workflow(TWO_ORDERS[0]).unwrap());
        let b = serialize(&parse_workflow(TWO_ORDERS[1]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_equals_normalized() {
        let spec = parse_workflow(TWO_ORDERS[0]).unwrap();
        let again = parse_workflow(&serialize(&spec)).unwrap();
        assert_eq!(again, spec.normalize());
        assert_ne!(spec, spec.normalize());
    }

    #[test]
    fn escapes_special_characters() {
        let xml = r#"<workflow name="a &amp; b" version="1">
  <node id="a" kind="Initialiser" plugin="p"><method name="m"><param name="t">x &lt; "y"</param></method></node>
  <loop id="l" condition="user-decision" prompt="keep &quot;going&quot;?" default="stop" timeout-s="0.5" n="3"><body node="a"/></loop>
</workflow>"#;
        let spec = parse_workflow(xml).unwrap();
        assert_eq!(spec.name, "a & b");
        assert_eq!(spec.nodes[0].methods[0].params["t"], "x < \"y\"");
        assert_eq!(parse_workflow(&serialize(&spec)).unwrap(), spec.normalize());
    }
}
