use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::dsl::topology::{EdgeKind, Topology};
use crate::dsl::WorkflowSpec;

/// One step of a scope: a node, or a loop whose body is a nested scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PlanItem {
    Node { id: String },
    Loop { id: String, items: Vec<PlanItem> },
}

impl PlanItem {
    fn collect_nodes(&self, out: &mut Vec<String>) {
        match self {
            PlanItem::Node { id } => out.push(id.clone()),
            PlanItem::Loop { items, .. } => items.iter().for_each(|i| i.collect_nodes(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionPlan {
    pub items: Vec<PlanItem>,
}

impl ExecutionPlan {
    /// Every node once, in plan order.
    pub fn node_order(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.items.iter().for_each(|i| i.collect_nodes(&mut out));
        out
    }

    /// Items of a loop's body scope.
    pub fn loop_items(&self, loop_id: &str) -> Option<&[PlanItem]> {
        fn find<'a>(items: &'a [PlanItem], id: &str) -> Option<&'a [PlanItem]> {
            items.iter().find_map(|i| match i {
                PlanItem::Loop { id: l, items } if l == id => Some(items.as_slice()),
                PlanItem::Loop { items, .. } => find(items, id),
                PlanItem::Node { .. } => None,
            })
        }
        find(&self.items, loop_id)
    }

    /// Last node executed in one pass of a loop.
    pub fn last_node_of(&self, loop_id: &str) -> Option<String> {
        let items = self.loop_items(loop_id)?;
        let mut out = Vec::new();
        items.iter().for_each(|i| i.collect_nodes(&mut out));
        out.pop()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{0}")]
    Topology(String),
    #[error("cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Topological plan with each loop collapsed to one item of its enclosing
/// scope. Ties go to the lexicographically smallest id.
pub fn plan(spec: &WorkflowSpec) -> Result<ExecutionPlan, PlanError> {
    let topo = Topology::new(spec).map_err(|(_, m)| PlanError::Topology(m))?;

    // Scope key: the enclosing loop, or None for the top level.
    let item_at = |node: &str, depth: usize| -> (String, bool) {
        match topo.loops_of(node).get(depth) {
            Some(l) => (l.clone(), true),
            None => (node.to_string(), false),
        }
    };
    let mut edges: BTreeMap<Option<String>, BTreeSet<((String, bool), (String, bool))>> = BTreeMap::new();
    for b in &spec.bindings {
        let (Some(src), Some(EdgeKind::Forward)) = (b.source_node(), topo.edge_kind(b)) else {
            continue;
        };
        let common = topo.common_loops(&src.node, &b.target.node);
        let depth = common.len();
        edges
            .entry(common.last().cloned())
            .or_default()
            .insert((item_at(&src.node, depth), item_at(&b.target.node, depth)));
    }

    fn build(
        spec: &WorkflowSpec,
        topo: &Topology,
        scope: Option<&str>,
        edges: &BTreeMap<Option<String>, BTreeSet<((String, bool), (String, bool))>>,
    ) -> Result<Vec<PlanItem>, PlanError> {
        let depth = scope.map(|l| topo.ancestors_of(l).len() + 1).unwrap_or(0);
        let mut members: BTreeMap<(String, bool), PlanItem> = BTreeMap::new();
        for n in &spec.nodes {
            if topo.loops_of(&n.id).len() == depth && topo.loops_of(&n.id).last().map(String::as_str) == scope {
                members.insert((n.id.clone(), false), PlanItem::Node { id: n.id.clone() });
            }
        }
        for l in &spec.loops {
            if topo.parent_of(&l.id) == scope {
                let items = build(spec, topo, Some(&l.id), edges)?;
                members.insert((l.id.clone(), true), PlanItem::Loop { id: l.id.clone(), items });
            }
        }
        let scope_edges = edges.get(&scope.map(str::to_string)).cloned().unwrap_or_default();
        let mut indeg: BTreeMap<(String, bool), usize> = members.keys().map(|k| (k.clone(), 0)).collect();
        for (_, to) in &scope_edges {
            *indeg.get_mut(to).expect("edge endpoints are scope members") += 1;
        }
        let mut ready: BTreeSet<(String, bool)> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| k.clone()).collect();
        let mut order = Vec::new();
        while let Some(k) = ready.pop_first() {
            for (_, to) in scope_edges.iter().filter(|(from, _)| *from == k) {
                let d = indeg.get_mut(to).expect("member");
                *d -= 1;
                if *d == 0 {
                    ready.insert(to.clone());
                }
            }
            indeg.remove(&k);
            order.push(members.remove(&k).expect("member"));
        }
        if !indeg.is_empty() {
            return Err(PlanError::Cycle(find_cycle(&indeg, &scope_edges)));
        }
        Ok(order)
    }

    let items = build(spec, &topo, None, &edges)?;
    Ok(ExecutionPlan { items })
}

/// Walk predecessors among the unscheduled items until one repeats.
fn find_cycle(left: &BTreeMap<(String, bool), usize>, edges: &BTreeSet<((String, bool), (String, bool))>) -> Vec<String> {
    let start = left.keys().next().expect("non-empty").clone();
    let mut path = vec![start.clone()];
    let mut cur = start;
    loop {
        let pred = edges
            .iter()
            .find(|(from, to)| *to == cur && left.contains_key(from))
            .map(|(from, _)| from.clone())
            .expect("every unscheduled item has an unscheduled predecessor");
        if let Some(pos) = path.iter().position(|p| *p == pred) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|(n, _)| n.clone()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        path.push(pred.clone());
        cur = pred;
    }
}
