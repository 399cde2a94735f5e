#![allow(dead_code)]

pub mod mutate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use labloom::builtin::with_builtins;
use labloom::dsl::{parse_workflow, WorkflowSpec};
use labloom::engine::{make_headless, Phase, Run, RunOptions};
use labloom::plugin::PluginRegistry;
use serde_json::Value;

pub fn demos_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos")
}

pub fn demo_dir(case: &str) -> PathBuf {
    demos_root().join(case)
}

pub fn demo_spec(case: &str) -> WorkflowSpec {
    let text = std::fs::read_to_string(demo_dir(case).join("workflow.xml")).expect("demo workflow");
    parse_workflow(&text).expect("demo parses")
}

pub fn registry() -> Arc<PluginRegistry> {
    Arc::new(with_builtins())
}

/// Start a demo with its data directory as base.
pub fn start_demo(reg: &Arc<PluginRegistry>, case: &str, spec: WorkflowSpec, runs: &Path, seed: u64) -> Run {
    let opts = RunOptions {
        run_id: None,
        seed: Some(seed),
        base_dir: demo_dir(case),
    };
    Run::start(Arc::clone(reg), spec, runs, opts).expect("demo starts")
}

/// Headless demo run to completion.
pub fn run_headless(reg: &Arc<PluginRegistry>, case: &str, runs: &Path, seed: u64, edit: impl FnOnce(&mut WorkflowSpec)) -> Run {
    let mut spec = make_headless(&demo_spec(case), reg);
    edit(&mut spec);
    let mut run = start_demo(reg, case, spec, runs, seed);
    let phase = run.run_to_end().expect("engine error");
    assert_eq!(phase, Phase::Completed, "failure: {:?}", run.state().failure);
    run
}

/// Value of the single artifact at a node port with the deepest iteration.
pub fn last_value(run: &Run, node: &str, port: &str) -> Value {
    let rec = run
        .store()
        .at_port(node, port)
        .last()
        .unwrap_or_else(|| panic!("no artifact at {node}.{port}"))
        .clone();
    run.store().value(&rec).expect("artifact value")
}

pub fn points(v: &Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v["points"].clone()).expect("points")
}

pub fn numbers(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).expect("numbers")
}
