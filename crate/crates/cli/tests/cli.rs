use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use labloom::builtin::with_builtins;
use labloom::dsl::parse_workflow;
use labloom::engine::{make_headless, Run, RunOptions};
use proptest::prelude::*;
use serde_json::{json, Value};

fn demo_dir(case: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos").join(case)
}

fn demo_spec(case: &str) -> PathBuf {
    demo_dir(case).join("workflow.xml")
}

fn labloom(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labloom"))
        .args(args)
        .env("LABLOOM_RUNS_DIR", runs)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
        .unwrap_or_else(|| panic!("no {key}= line in:\n{text}"))
}

/// Summary lines that do not depend on the generated run id.
fn stable_summary(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with("run_id=")).collect()
}

fn decision_loop(timeout_s: f64, cap: usize) -> String {
    format!(
        r#"<workflow name="steered" version="1" seed="3">
  <node id="init" kind="Initialiser" plugin="grid-space"><method name="build">
    <param name="lo">-1</param><param name="hi">1</param><param name="step">0.5</param></method></node>
  <node id="rs" kind="DecisionMaking" plugin="random-search"><method name="propose"/>
    <input port="candidates" from-node="init" from-port="candidates"/></node>
  <node id="ev" kind="Environment" plugin="test-function"><method name="evaluate"/>
    <input port="suggestions" from-node="rs" from-port="suggestions"/></node>
  <node id="out" kind="Output" plugin="report"><method name="write"/>
    <input port="data" from-node="ev" from-port="result"/></node>
  <loop id="l" condition="user-decision" prompt="again?" default="continue" timeout-s="{timeout_s}" n="{cap}">
    <body node="rs"/><body node="ev"/></loop>
</workflow>"#
    )
}

#[test]
fn validate_reports_and_sets_the_exit_code() {
    let runs = tempfile::tempdir().unwrap();
    for case in ["case_a", "case_b", "case_c"] {
        let o = labloom(runs.path(), &["validate", demo_spec(case).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{case}: {}", stdout(&o));
        assert_eq!(field(&stdout(&o), "ok"), "true");
    }

    let bad = runs.path().join("bad.xml");
    let text = std::fs::read_to_string(demo_spec("case_a")).unwrap();
    std::fs::write(&bad, text.replace("plugin=\"instability-index\"", "plugin=\"no-such-plugin\"")).unwrap();
    let o = labloom(runs.path(), &["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("error") && l.contains("no-such-plugin")), "{}", stdout(&o));

    let o = labloom(runs.path(), &["validate", bad.to_str().unwrap(), "--json"]);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["ok"], false);

    let o = labloom(runs.path(), &["validate", "/definitely/not/here.xml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn headless_run_is_deterministic_and_matches_the_engine() {
    let runs = tempfile::tempdir().unwrap();
    let spec = demo_spec("case_a");
    let args = ["run", spec.to_str().unwrap(), "--headless", "--seed", "7"];
    let first = labloom(runs.path(), &args);
    let second = labloom(runs.path(), &args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(second.status.code(), Some(0));
    let (a, b) = (stdout(&first), stdout(&second));
    assert_ne!(field(&a, "run_id"), field(&b, "run_id"));
    assert_eq!(stable_summary(&a), stable_summary(&b));
    assert_eq!(field(&a, "phase"), "completed");

    let reg = Arc::new(with_builtins());
    let parsed = parse_workflow(&std::fs::read_to_string(&spec).unwrap()).unwrap();
    let engine_runs = tempfile::tempdir().unwrap();
    let mut run = Run::start(
        Arc::clone(&reg),
        make_headless(&parsed, &reg),
        engine_runs.path(),
        RunOptions {
            seed: Some(7),
            base_dir: demo_dir("case_a"),
            ..Default::default()
        },
    )
    .unwrap();
    run.run_to_end().unwrap();
    assert_eq!(field(&a, "artifacts"), run.store().len().to_string());
    let cli_store = labloom::datastore::ArtifactStore::open(&runs.path().join(field(&a, "run_id"))).unwrap();
    let ids = |recs: &[labloom::datastore::ArtifactRecord]| {
        let mut v: Vec<String> = recs.iter().map(|r| r.artifact_id.clone()).collect();
        v.sort();
        v
    };
    assert_eq!(ids(cli_store.records()), ids(run.store().records()));
}

#[test]
fn all_demos_run_headless() {
    let runs = tempfile::tempdir().unwrap();
    for case in ["case_a", "case_b", "case_c"] {
        let o = labloom(runs.path(), &["run", demo_spec(case).to_str().unwrap(), "--headless", "--json"]);
        assert_eq!(o.status.code(), Some(0), "{case}: {}", stderr(&o));
        let s: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(s["phase"], "completed");
        assert!(!s["outputs"].as_array().unwrap().is_empty());
        assert!(runs.path().join(s["run_id"].as_str().unwrap()).is_dir());
    }
}

#[test]
fn invalid_specs_fail_before_execution() {
    let runs = tempfile::tempdir().unwrap();
    let bad = runs.path().join("bad.xml");
    let text = std::fs::read_to_string(demo_spec("case_c")).unwrap();
    let first_plugin = text.split("plugin=\"").nth(1).unwrap().split('"').next().unwrap();
    std::fs::write(&bad, text.replacen(first_plugin, "no-such-plugin", 1)).unwrap();
    let o = labloom(runs.path(), &["run", bad.to_str().unwrap(), "--headless"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-plugin"));
    let entries: Vec<_> = std::fs::read_dir(runs.path()).unwrap().filter_map(Result::ok).collect();
    assert_eq!(entries.len(), 1, "only the spec file; no run directory");
}

#[test]
fn a_failing_node_is_named() {
    let runs = tempfile::tempdir().unwrap();
    let spec = runs.path().join("missing-data.xml");
    let text = std::fs::read_to_string(demo_spec("case_a")).unwrap();
    std::fs::write(&spec, text).unwrap();
    let o = labloom(runs.path(), &["run", spec.to_str().unwrap(), "--headless"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert_eq!(field(&stdout(&o), "phase"), "failed");
    assert!(stderr(&o).contains("node 'init' failed"), "{}", stderr(&o));
}

#[test]
fn status_export_and_stale_answers() {
    let runs = tempfile::tempdir().unwrap();
    let spec = runs.path().join("three.xml");
    let text = std::fs::read_to_string(demo_spec("case_a")).unwrap();
    let at = text.find("<loop id=\"campaign\"").unwrap();
    let (head, tail) = text.split_at(at);
    std::fs::write(&spec, format!("{head}{}", tail.replacen("n=\"10\"", "n=\"3\"", 1))).unwrap();
    std::fs::create_dir_all(runs.path().join("data")).unwrap();
    for f in std::fs::read_dir(demo_dir("case_a").join("data")).unwrap() {
        let f = f.unwrap();
        std::fs::copy(f.path(), runs.path().join("data").join(f.file_name())).unwrap();
    }
    std::fs::copy(demo_dir("case_a").join("simulator.json"), runs.path().join("simulator.json")).unwrap();

    let o = labloom(runs.path(), &["run", spec.to_str().unwrap(), "--headless", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run_dir = runs.path().join(field(&stdout(&o), "run_id"));
    let d = run_dir.to_str().unwrap();

    let st = labloom(runs.path(), &["status", d]);
    assert_eq!(st.status.code(), Some(0));
    assert_eq!(field(&stdout(&st), "phase"), "completed");

    let events: Vec<Value> = std::fs::read_to_string(run_dir.join("events.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut imaged: Vec<String> = events
        .iter()
        .filter(|e| e["type"] == "node-finished" && e["node_id"] == "imaging")
        .map(|e| e["iteration"].as_str().unwrap().to_string())
        .collect();
    imaged.sort();
    assert_eq!(imaged.len(), 6, "three campaigns of two batches");

    let out = runs.path().join("scalars.csv");
    let ex = labloom(runs.path(), &["export", d, out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(ex.status.code(), Some(0), "{}", stderr(&ex));
    let table = std::fs::read_to_string(&out).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("node,port,iteration,value"));
    let mut rows: Vec<String> = lines
        .filter(|l| l.starts_with("imaging,index,"))
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    rows.sort();
    assert_eq!(rows, imaged);

    let ex = labloom(runs.path(), &["export", d, "-", "--format", "json"]);
    let as_json: Vec<Value> = serde_json::from_slice(&ex.stdout).unwrap();
    assert_eq!(as_json.len(), table.lines().count() - 1);

    let rid = events
        .iter()
        .find(|e| e["type"] == "interaction-raised")
        .map(|e| e["request"]["request_id"].as_str().unwrap().to_string())
        .unwrap();
    let ans = labloom(runs.path(), &["answer", d, &rid, "stop"]);
    assert_eq!(ans.status.code(), Some(1));
    assert!(stderr(&ans).contains("stale") || stderr(&ans).contains("resolved"), "{}", stderr(&ans));
}

#[test]
fn answer_then_resume_a_paused_run() {
    let runs = tempfile::tempdir().unwrap();
    let reg = Arc::new(with_builtins());
    let mut run = Run::start(
        Arc::clone(&reg),
        parse_workflow(&decision_loop(30.0, 5)).unwrap(),
        runs.path(),
        RunOptions::default(),
    )
    .unwrap();
    while run.state().pending_interactions.is_empty() {
        run.step().unwrap();
    }
    let rid = run.state().pending_interactions[0].request_id.clone();
    run.pause().unwrap();
    let run_dir = run.run_dir().to_path_buf();
    drop(run);
    let d = run_dir.to_str().unwrap();

    let st = stdout(&labloom(runs.path(), &["status", d]));
    assert_eq!(field(&st, "phase"), "paused");
    assert!(st.contains(&format!("pending {rid} ")));

    let ans = labloom(runs.path(), &["answer", d, &rid, "stop"]);
    assert_eq!(ans.status.code(), Some(0), "{}", stderr(&ans));
    let ck = field(&stdout(&ans), "checkpoint").to_string();

    let res = labloom(runs.path(), &["resume", &ck, "--json"]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr(&res));
    let s: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(s["phase"], "completed");
    let evs = std::fs::read_to_string(run_dir.join("events.jsonl")).unwrap();
    let body_runs = evs
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|e| e["type"] == "node-finished" && e["node_id"] == "ev")
        .count();
    assert_eq!(body_runs, 1, "stopped after the first pass");

    let again = labloom(runs.path(), &["resume", &ck]);
    assert_eq!(again.status.code(), Some(1));
    let missing = labloom(runs.path(), &["resume", "/no/such/checkpoint.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn serve_exposes_the_running_workflow() {
    let runs = tempfile::tempdir().unwrap();
    let spec = runs.path().join("steered.xml");
    std::fs::write(&spec, decision_loop(60.0, 5)).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_labloom"))
        .args(["run", spec.to_str().unwrap(), "--serve", "127.0.0.1:0"])
        .env("LABLOOM_RUNS_DIR", runs.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("serving ").unwrap().to_string();

    let http = reqwest::blocking::Client::new();
    let rid = loop {
        let pending: Vec<Value> = http.get(format!("{url}/interactions")).send().unwrap().json().unwrap();
        if let Some(p) = pending.first() {
            break p["request_id"].as_str().unwrap().to_string();
        }
        std::thread::sleep(std::time::Duration::from_millis(10));
    };
    let r = http
        .post(format!("{url}/interactions/{rid}/answer"))
        .json(&json!({"answer": "stop"}))
        .send()
        .unwrap();
    assert!(r.status().is_success());
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(field(&stdout(&out), "phase"), "completed");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Truncated documents are validation failures, never usage errors or crashes.
    #[test]
    fn exit_codes_under_fault_injection(cut in 0.0f64..1.0, fault in 0usize..4) {
        let runs = tempfile::tempdir().unwrap();
        let text = std::fs::read_to_string(demo_spec("case_c")).unwrap();
        let spec = runs.path().join("w.xml");
        let s = spec.to_str().unwrap();
        let absent = runs.path().join("absent");
        let n = (text.trim_end().len() as f64 * cut) as usize;
        std::fs::write(&spec, &text.as_bytes()[..n]).unwrap();
        let (args, want): (Vec<&str>, i32) = match fault {
            0 => (vec!["validate", s], 1),
            1 => (vec!["run", s, "--headless"], 1),
            2 => (vec!["export", s, "-", "--format", "xml"], 2),
            _ => (vec!["status", absent.to_str().unwrap()], 2),
        };
        let o = labloom(runs.path(), &args);
        prop_assert_eq!(o.status.code(), Some(want), "{:?}: {}", args, stderr(&o));
    }
}
