//! Loop nesting and edge classification shared by validation, planning, and
//! binding resolution.

use std::collections::BTreeMap;

use super::model::{DataBinding, WorkflowSpec};

/// How a node-to-node binding is read at run time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeKind {
    /// Source runs before the consumer in the same pass of every loop they share.
    Forward,
    /// Consumer reads the source's output from the previous pass of `loop_id`,
    /// the innermost loop containing both. Absent on the first pass.
    Back { loop_id: String },
}

#[derive(Debug, Clone)]
pub struct Topology {
    /// Loops enclosing each node, outermost first.
    node_loops: BTreeMap<String, Vec<String>>,
    /// Enclosing loop of each loop.
    parent: BTreeMap<String, Option<String>>,
    doc_index: BTreeMap<String, usize>,
}

impl Topology {
    /// Fails when two loops partially overlap or share the same body.
    pub fn new(spec: &WorkflowSpec) -> Result<Topology, (String, String)> {
        let sizes: BTreeMap<&str, usize> = spec.loops.iter().map(|l| (l.id.as_str(), l.body.len())).collect();
        let mut parent = BTreeMap::new();
        for a in &spec.loops {
            let mut best: Option<&str> = None;
            for b in &spec.loops {
                if a.id == b.id {
                    continue;
                }
                let shared = a.body.iter().filter(|n| b.contains(n)).count();
                if shared == 0 {
                    continue;
                }
                let a_in_b = shared == a.body.len();
                let b_in_a = shared == b.body.len();
                if a_in_b && b_in_a {
                    return Err((a.id.clone(), format!("loops '{}' and '{}' have identical bodies", a.id, b.id)));
                }
                if !a_in_b && !b_in_a {
                    return Err((
                        a.id.clone(),
                        format!("partially overlapping loops '{}' and '{}'", a.id, b.id),
                    ));
                }
                if a_in_b && best.is_none_or(|cur| sizes[b.id.as_str()] < sizes[cur]) {
                    best = Some(&b.id);
                }
            }
            parent.insert(a.id.clone(), best.map(str::to_string));
        }
        let mut node_loops = BTreeMap::new();
        for n in &spec.nodes {
            let mut ls: Vec<&str> = spec.loops.iter().filter(|l| l.contains(&n.id)).map(|l| l.id.as_str()).collect();
            // Strict nesting makes body size a total order along the chain.
            ls.sort_by_key(|l| std::cmp::Reverse(sizes[l]));
            node_loops.insert(n.id.clone(), ls.into_iter().map(str::to_string).collect());
        }
        let doc_index = spec.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(Topology {
            node_loops,
            parent,
            doc_index,
        })
    }

    pub fn loops_of(&self, node: &str) -> &[String] {
        self.node_loops.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parent_of(&self, loop_id: &str) -> Option<&str> {
        self.parent.get(loop_id).and_then(|p| p.as_deref())
    }

    /// Loops enclosing `loop_id`, outermost first, excluding itself.
    pub fn ancestors_of(&self, loop_id: &str) -> Vec<String> {
        let mut chain = Vec::new();
        let mut cur = self.parent_of(loop_id);
        while let Some(l) = cur {
            chain.push(l.to_string());
            cur = self.parent_of(l);
        }
        chain.reverse();
        chain
    }

    /// Loops enclosing both nodes, outermost first.
    pub fn common_loops(&self, a: &str, b: &str) -> Vec<String> {
        self.loops_of(a)
            .iter()
            .zip(self.loops_of(b))
            .take_while(|(x, y)| x == y)
            .map(|(x, _)| x.clone())
            .collect()
    }

    pub fn doc_index(&self, node: &str) -> usize {
        self.doc_index.get(node).copied().unwrap_or(usize::MAX)
    }

    /// Classification of a node-to-node binding; `None` for folder sources.
    pub fn edge_kind(&self, b: &DataBinding) -> Option<EdgeKind> {
        let src = b.source_node()?;
        let common = self.common_loops(&src.node, &b.target.node);
        Some(match common.last() {
            Some(inner) if self.doc_index(&src.node) >= self.doc_index(&b.target.node) => EdgeKind::Back {
                loop_id: inner.clone(),
            },
            _ => EdgeKind::Forward,
        })
    }
}
