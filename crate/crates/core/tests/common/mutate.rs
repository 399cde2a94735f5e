//! Spec mutations labelled by whether they break a workflow invariant.

use labloom::dsl::{
    effective_methods, BindingSource, LoopCondition, LoopSpec, MethodCall, ModuleKind, WorkflowSpec,
};
use labloom::plugin::PluginRegistry;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Reject,
    Accept,
}

type Apply = fn(&mut WorkflowSpec, &PluginRegistry, &mut dyn FnMut(usize) -> usize) -> bool;

pub const MUTATIONS: &[(&str, Expect, Apply)] = &[
    ("remove-initialiser", Expect::Reject, remove_initialiser),
    ("second-initialiser", Expect::Reject, second_initialiser),
    ("dangling-source", Expect::Reject, dangling_source),
    ("missing-source-port", Expect::Reject, missing_source_port),
    ("kind-swap", Expect::Reject, kind_swap),
    ("unknown-plugin", Expect::Reject, unknown_plugin),
    ("drop-required-binding", Expect::Reject, drop_required_binding),
    ("ghost-in-loop", Expect::Reject, ghost_in_loop),
    ("zero-passes", Expect::Reject, zero_passes),
    ("partial-overlap", Expect::Reject, partial_overlap),
    ("duplicate-node", Expect::Reject, duplicate_node),
    ("double-binding", Expect::Reject, double_binding),
    ("unknown-method", Expect::Reject, unknown_method),
    ("unknown-param", Expect::Reject, unknown_param),
    ("reseed", Expect::Accept, reseed),
    ("rename-node", Expect::Accept, rename_node),
    ("reverse-bindings", Expect::Accept, reverse_bindings),
    ("awkward-name", Expect::Accept, awkward_name),
    ("longer-loop", Expect::Accept, longer_loop),
];

/// Apply mutation `which` with choices drawn from `rng`. `None` when the
/// mutation has no target in this spec.
pub fn mutate<R: Rng>(
    spec: &WorkflowSpec,
    reg: &PluginRegistry,
    which: usize,
    rng: &mut R,
) -> Option<(&'static str, Expect, WorkflowSpec)> {
    let (name, expect, apply) = MUTATIONS[which % MUTATIONS.len()];
    let mut out = spec.clone();
    let mut pick = |n: usize| rng.random_range(0..n);
    apply(&mut out, reg, &mut pick).then_some((name, expect, out))
}

fn choose<T>(items: &[T], pick: &mut dyn FnMut(usize) -> usize) -> Option<usize> {
    (!items.is_empty()).then(|| pick(items.len()))
}

fn initialiser(spec: &WorkflowSpec) -> Option<usize> {
    spec.nodes.iter().position(|n| n.kind == ModuleKind::Initialiser)
}

fn remove_initialiser(s: &mut WorkflowSpec, _: &PluginRegistry, _: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = initialiser(s) else { return false };
    let id = s.nodes.remove(i).id;
    s.bindings
        .retain(|b| b.target.node != id && b.source_node().is_none_or(|p| p.node != id));
    true
}

fn second_initialiser(s: &mut WorkflowSpec, _: &PluginRegistry, _: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = initialiser(s) else { return false };
    let mut twin = s.nodes[i].clone();
    twin.id = format!("{}_twin", twin.id);
    s.nodes.push(twin);
    true
}

fn node_output_bindings(s: &WorkflowSpec) -> Vec<usize> {
    (0..s.bindings.len()).filter(|&i| s.bindings[i].source_node().is_some()).collect()
}

fn dangling_source(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let idx = node_output_bindings(s);
    let Some(k) = choose(&idx, pick) else { return false };
    if let BindingSource::NodeOutput(p) = &mut s.bindings[idx[k]].source {
        p.node = "ghost".into();
    }
    true
}

fn missing_source_port(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let idx = node_output_bindings(s);
    let Some(k) = choose(&idx, pick) else { return false };
    if let BindingSource::NodeOutput(p) = &mut s.bindings[idx[k]].source {
        p.port = "no_such_port".into();
    }
    true
}

fn kind_swap(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.nodes, pick) else { return false };
    let others: Vec<ModuleKind> = ModuleKind::ALL.into_iter().filter(|k| *k != s.nodes[i].kind).collect();
    s.nodes[i].kind = others[pick(others.len())];
    true
}

fn unknown_plugin(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.nodes, pick) else { return false };
    s.nodes[i].plugin = "no-such-plugin".into();
    true
}

fn drop_required_binding(s: &mut WorkflowSpec, reg: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let required: Vec<usize> = (0..s.bindings.len())
        .filter(|&i| {
            let b = &s.bindings[i];
            let Some(node) = s.node(&b.target.node) else { return false };
            let Some(p) = reg.get(node.kind, &node.plugin) else { return false };
            effective_methods(node, &p.descriptor().methods)
                .iter()
                .filter_map(|(_, m)| *m)
                .flat_map(|m| &m.input_ports)
                .any(|port| port.name == b.target.port && !port.optional)
        })
        .collect();
    let Some(k) = choose(&required, pick) else { return false };
    s.bindings.remove(required[k]);
    true
}

fn ghost_in_loop(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.loops, pick) else { return false };
    s.loops[i].body.push("ghost".into());
    true
}

fn zero_passes(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.loops, pick) else { return false };
    match &mut s.loops[i].condition {
        LoopCondition::MaxIterations { n } => *n = 0,
        LoopCondition::PredicatePort { cap, .. } | LoopCondition::UserDecision { cap, .. } => *cap = Some(0),
    }
    true
}

fn partial_overlap(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let wide: Vec<usize> = (0..s.loops.len()).filter(|&i| s.loops[i].body.len() >= 2).collect();
    let Some(k) = choose(&wide, pick) else { return false };
    let l = &s.loops[wide[k]];
    let inside = l.body[pick(l.body.len())].clone();
    let outside: Vec<String> = s.nodes.iter().map(|n| n.id.clone()).filter(|id| !l.contains(id)).collect();
    let Some(o) = choose(&outside, pick) else { return false };
    s.loops.push(LoopSpec {
        id: "overlap".into(),
        body: vec![inside, outside[o].clone()],
        condition: LoopCondition::MaxIterations { n: 2 },
    });
    true
}

fn duplicate_node(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.nodes, pick) else { return false };
    let twin = s.nodes[i].clone();
    s.nodes.push(twin);
    true
}

fn double_binding(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.bindings, pick) else { return false };
    let twin = s.bindings[i].clone();
    s.bindings.push(twin);
    true
}

fn unknown_method(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.nodes, pick) else { return false };
    let node = &mut s.nodes[i];
    match node.methods.first_mut() {
        Some(m) => m.name = "no_such_method".into(),
        None => node.methods.push(MethodCall {
            name: "no_such_method".into(),
            params: Default::default(),
        }),
    }
    true
}

fn unknown_param(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let with: Vec<usize> = (0..s.nodes.len()).filter(|&i| !s.nodes[i].methods.is_empty()).collect();
    let Some(k) = choose(&with, pick) else { return false };
    s.nodes[with[k]].methods[0].params.insert("bogus_param".into(), "1".into());
    true
}

fn reseed(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    s.seed = Some(pick(1_000_000) as u64);
    true
}

fn rename_node(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.nodes, pick) else { return false };
    let old = s.nodes[i].id.clone();
    let new = format!("renamed_{old}");
    s.nodes[i].id = new.clone();
    for b in &mut s.bindings {
        if b.target.node == old {
            b.target.node = new.clone();
        }
        if let BindingSource::NodeOutput(p) = &mut b.source {
            if p.node == old {
                p.node = new.clone();
            }
        }
    }
    for l in &mut s.loops {
        for n in &mut l.body {
            if *n == old {
                *n = new.clone();
            }
        }
        if let LoopCondition::PredicatePort { node, .. } = &mut l.condition {
            if *node == old {
                *node = new.clone();
            }
        }
    }
    true
}

fn reverse_bindings(s: &mut WorkflowSpec, _: &PluginRegistry, _: &mut dyn FnMut(usize) -> usize) -> bool {
    s.bindings.reverse();
    true
}

fn awkward_name(s: &mut WorkflowSpec, _: &PluginRegistry, _: &mut dyn FnMut(usize) -> usize) -> bool {
    s.name = "trial & <error> \"quoted\"".into();
    true
}

fn longer_loop(s: &mut WorkflowSpec, _: &PluginRegistry, pick: &mut dyn FnMut(usize) -> usize) -> bool {
    let Some(i) = choose(&s.loops, pick) else { return false };
    match &mut s.loops[i].condition {
        LoopCondition::MaxIterations { n } => *n += 1,
        LoopCondition::PredicatePort { cap, .. } => *cap = Some(cap.unwrap_or(1) + 1),
        LoopCondition::UserDecision { timeout_s, .. } => *timeout_s += 2.5,
    }
    true
}
