use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde_json::{json, Value};

use super::events::{EngineEvent, EventKind, EventLog};
use super::plan::{plan, ExecutionPlan, PlanItem};
use super::state::{Checkpoint, ConfigPatch, EngineError, Frame, InteractionRequest, NodeStatus, Phase, RunState};
use crate::datastore::{
    content_hash, load_folder, resolve_node_output, ArtifactStore, NewArtifact, Responder, INPUTS_NODE,
};
use crate::dsl::topology::Topology;
use crate::dsl::{
    decision_port, effective_methods, serialize, validate, BindingSource, DataFormat, Decision, FolderSource,
    LoopCondition, MethodCall, WorkflowSpec,
};
use crate::iteration::IterationVector;
use crate::plugin::{DataKind, InteractionKind, InvokeRequest, MethodSpec, ParamType, PluginRegistry};
use crate::rng::stream_key;

/// Wait applied when neither the spec nor the plugin names one.
pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

/// Parameter through which interactive builtin plugins take their timeout.
pub const TIMEOUT_PARAM: &str = "timeout_s";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Generated when absent.
    pub run_id: Option<String>,
    /// Overrides the spec's seed.
    pub seed: Option<u64>,
    /// Folder sources and path parameters resolve against this directory.
    pub base_dir: PathBuf,
}

/// Copy of `spec` in which every wait resolves immediately to its default.
pub fn make_headless(spec: &WorkflowSpec, registry: &PluginRegistry) -> WorkflowSpec {
    let mut out = spec.clone();
    for l in &mut out.loops {
        if let LoopCondition::UserDecision { timeout_s, .. } = &mut l.condition {
            *timeout_s = 0.0;
        }
    }
    for node in &mut out.nodes {
        let Some(p) = registry.get(node.kind, &node.plugin) else { continue };
        let methods = &p.descriptor().methods;
        if node.methods.is_empty() {
            if let Some(first) = methods.first() {
                node.methods.push(MethodCall {
                    name: first.name.clone(),
                    params: BTreeMap::new(),
                });
            }
        }
        for call in &mut node.methods {
            if let Some(m) = methods.iter().find(|m| m.name == call.name) {
                if m.interaction.is_some() && m.param_spec(TIMEOUT_PARAM).is_some() {
                    call.params.insert(TIMEOUT_PARAM.into(), "0".into());
                }
            }
        }
    }
    out
}

/// Normalize an answer for its kind, or say why it does not fit.
pub fn check_answer(kind: InteractionKind, answer: &Value) -> Result<Value, String> {
    match kind {
        InteractionKind::TerminateDecision => match answer.as_str() {
            Some(s) => s.parse::<Decision>().map(|d| json!(d.as_str())),
            None => Err(format!("expected \"continue\" or \"stop\", got {answer}")),
        },
        InteractionKind::LabelItem => match answer.as_u64() {
            Some(v @ (0 | 1)) => Ok(json!(v)),
            _ => Err(format!("a label must be 0 or 1, got {answer}")),
        },
        InteractionKind::ApproveSuggestions => {
            let points = match answer {
                Value::Array(_) => answer,
                Value::Object(o) => o.get("points").ok_or("expected an object with 'points'")?,
                _ => return Err(format!("expected a list of points, got {answer}")),
            };
            let points = points.as_array().ok_or("'points' must be a list")?;
            let mut dim = None;
            for p in points {
                let coords = p.as_array().ok_or_else(|| format!("point {p} is not a list"))?;
                if coords.is_empty() || coords.iter().any(|c| !c.as_f64().is_some_and(f64::is_finite)) {
                    return Err(format!("point {p} is not a list of finite numbers"));
                }
                if *dim.get_or_insert(coords.len()) != coords.len() {
                    return Err("points differ in dimension".into());
                }
            }
            Ok(json!({ "points": points }))
        }
        InteractionKind::EditConfig => {
            let patches = match answer.get("patches") {
                Some(p) => p.clone(),
                None if answer.get("param_path").is_some() => json!([answer]),
                None => return Err("expected a config patch or {\"patches\": [...]}".into()),
            };
            let list: Vec<ConfigPatch> =
                serde_json::from_value(patches.clone()).map_err(|e| format!("bad config patch: {e}"))?;
            Ok(json!({ "patches": list.iter().map(|p| json!({
                "node_id": p.node_id, "param_path": p.param_path, "new_value": p.new_value,
            })).collect::<Vec<_>>() }))
        }
    }
}

enum Flow {
    Continue,
    Blocked,
}

/// One workflow execution. All mutation goes through `&mut self`; callers
/// that share a run serialize access (see `RunManager`).
pub struct Run {
    state: RunState,
    registry: Arc<PluginRegistry>,
    store: ArtifactStore,
    events: Arc<EventLog>,
    plan: ExecutionPlan,
    topo: Topology,
    run_dir: PathBuf,
    deadlines: BTreeMap<String, Instant>,
    folder_cache: BTreeMap<FolderSource, (Value, Vec<String>)>,
}

impl std::fmt::Debug for Run {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Run")
            .field("run_id", &self.state.run_id)
            .field("phase", &self.state.phase)
            .finish()
    }
}

fn io(e: impl std::fmt::Display) -> EngineError {
    EngineError::Io(e.to_string())
}

fn plugin_versions(spec: &WorkflowSpec, registry: &PluginRegistry) -> BTreeMap<String, String> {
    spec.nodes
        .iter()
        .filter_map(|n| {
            registry
                .get(n.kind, &n.plugin)
                .map(|p| (format!("{}/{}", n.kind, n.plugin), p.descriptor().version.clone()))
        })
        .collect()
}

pub fn checkpoint_path(run_dir: &Path, k: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("{k}.json"))
}

/// Highest-numbered checkpoint of a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Option<PathBuf> {
    let entries = fs::read_dir(run_dir.join("checkpoints")).ok()?;
    entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".json")?.parse::<usize>().ok().map(|k| (k, e.path()))
        })
        .max_by_key(|(k, _)| *k)
        .map(|(_, p)| p)
}

impl Run {
    /// Validate, create `runs_dir/<run_id>`, and persist checkpoint 0.
    pub fn start(
        registry: Arc<PluginRegistry>,
        spec: WorkflowSpec,
        runs_dir: &Path,
        opts: RunOptions,
    ) -> Result<Run, EngineError> {
        let report = validate(&spec, &registry);
        if !report.ok {
            return Err(EngineError::Validation(report));
        }
        let plan = plan(&spec).map_err(|e| EngineError::Plan(e.to_string()))?;
        let topo = Topology::new(&spec).map_err(|(_, m)| EngineError::Plan(m))?;
        let run_id = opts
            .run_id
            .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string()[..12].to_string());
        if !crate::dsl::is_valid_ident(&run_id) {
            return Err(EngineError::Invalid(format!("bad run id '{run_id}'")));
        }
        let run_dir = runs_dir.join(&run_id);
        if run_dir.exists() {
            return Err(EngineError::Conflict(format!("run directory {} already exists", run_dir.display())));
        }
        fs::create_dir_all(run_dir.join("checkpoints")).map_err(io)?;
        fs::write(run_dir.join("spec.xml"), serialize(&spec)).map_err(io)?;
        let store = ArtifactStore::create(&run_id, &run_dir)?;
        let events = Arc::new(EventLog::open(&run_dir)?);
        let seed = opts.seed.or(spec.seed).unwrap_or(0);
        let base_dir = if opts.base_dir.as_os_str().is_empty() {
            std::env::current_dir().map_err(io)?
        } else {
            opts.base_dir
        };
        let state = RunState {
            run_id,
            node_status: spec.nodes.iter().map(|n| (n.id.clone(), NodeStatus::Pending)).collect(),
            iteration: BTreeMap::new(),
            rng_state: json!({"root_seed": seed, "streams": "sha256(seed, node, iteration, method) -> chacha8"}),
            phase: Phase::Running,
            pending_interactions: Vec::new(),
            patch_log: Vec::new(),
            cursor: vec![Frame {
                loop_id: None,
                pos: 0,
                pass: 0,
            }],
            resolved_requests: BTreeMap::new(),
            plugin_versions: plugin_versions(&spec, &registry),
            events_len: 0,
            checkpoints: 0,
            failure: None,
            spec,
            seed,
            base_dir,
        };
        let mut run = Run {
            state,
            registry,
            store,
            events,
            plan,
            topo,
            run_dir,
            deadlines: BTreeMap::new(),
            folder_cache: BTreeMap::new(),
        };
        run.write_checkpoint()?;
        Ok(run)
    }

    /// Reopen a run from a checkpoint without changing its phase. Refuses
    /// tampered checkpoints, missing or altered artifacts, checkpoints the
    /// run has moved past, and changed plugin versions.
    pub fn load(registry: Arc<PluginRegistry>, checkpoint: &Path) -> Result<Run, EngineError> {
        let text = fs::read(checkpoint).map_err(|e| EngineError::NotFound(format!("{}: {e}", checkpoint.display())))?;
        let ck: Checkpoint =
            serde_json::from_slice(&text).map_err(|e| EngineError::Integrity(format!("unreadable checkpoint: {e}")))?;
        ck.verify()?;
        let run_dir = checkpoint
            .parent()
            .and_then(Path::parent)
            .ok_or_else(|| EngineError::Invalid("checkpoint is not inside a run directory".into()))?
            .to_path_buf();
        let store = ArtifactStore::open(&run_dir)?;
        for id in &ck.artifact_index {
            if store.get(id).is_none() {
                return Err(EngineError::Integrity(format!("artifact {id} referenced by the checkpoint is missing")));
            }
        }
        if store.len() != ck.artifact_index.len() {
            return Err(EngineError::Conflict(
                "checkpoint is stale: the run produced artifacts after it was written".into(),
            ));
        }
        store.verify().map_err(|e| EngineError::Integrity(e.to_string()))?;
        let events = Arc::new(EventLog::open(&run_dir)?);
        if events.len() != ck.run_state.events_len {
            return Err(EngineError::Conflict("checkpoint is stale: the run logged events after it was written".into()));
        }
        let state = ck.run_state;
        let current = plugin_versions(&state.spec, &registry);
        if current != state.plugin_versions {
            return Err(EngineError::Conflict(format!(
                "plugin versions differ from the checkpoint: {:?} vs {:?}",
                current, state.plugin_versions
            )));
        }
        let plan = plan(&state.spec).map_err(|e| EngineError::Plan(e.to_string()))?;
        let topo = Topology::new(&state.spec).map_err(|(_, m)| EngineError::Plan(m))?;
        let now = Instant::now();
        let deadlines = state
            .pending_interactions
            .iter()
            .map(|r| (r.request_id.clone(), now + Duration::from_secs_f64(r.timeout_s)))
            .collect();
        Ok(Run {
            state,
            registry,
            store,
            events,
            plan,
            topo,
            run_dir,
            deadlines,
            folder_cache: BTreeMap::new(),
        })
    }

    /// Load a checkpoint and continue from it.
    pub fn resume_from(registry: Arc<PluginRegistry>, checkpoint: &Path) -> Result<Run, EngineError> {
        let mut run = Run::load(registry, checkpoint)?;
        if run.state.phase.is_finished() {
            return Err(EngineError::Conflict(format!("run already {}", run.state.phase.as_str())));
        }
        run.state.phase = Phase::Paused;
        run.resume()?;
        Ok(run)
    }

    pub fn run_id(&self) -> &str {
        &self.state.run_id
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn events(&self) -> &Arc<EventLog> {
        &self.events
    }

    pub fn plan(&self) -> &ExecutionPlan {
        &self.plan
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// Earliest moment a pending interaction falls back to its default.
    pub fn next_deadline(&self) -> Option<Instant> {
        self.deadlines.values().min().copied()
    }

    /// Execute at most one node, plus any loop bookkeeping around it.
    pub fn step(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        if self.state.phase != Phase::Running {
            return Ok(Vec::new());
        }
        let start = self.events.len();
        if self.state.pending_interactions.is_empty() {
            self.advance()?;
        } else {
            self.expire_due()?;
        }
        if self.state.phase.is_finished() {
            self.write_checkpoint()?;
        }
        Ok(self.events.since(start))
    }

    /// Step until the run completes, fails, or is paused, sleeping through
    /// interaction timeouts.
    pub fn run_to_end(&mut self) -> Result<Phase, EngineError> {
        while self.state.phase == Phase::Running {
            if !self.state.pending_interactions.is_empty() {
                if let Some(d) = self.next_deadline() {
                    let now = Instant::now();
                    if d > now {
                        std::thread::sleep(d - now);
                    }
                }
            }
            self.step()?;
        }
        Ok(self.state.phase)
    }

    /// Stop at the current node boundary and checkpoint. Pausing a paused
    /// run returns its existing checkpoint.
    pub fn pause(&mut self) -> Result<PathBuf, EngineError> {
        match self.state.phase {
            Phase::Paused => Ok(checkpoint_path(&self.run_dir, self.state.checkpoints - 1)),
            Phase::Running => {
                self.emit(EventKind::Paused {
                    checkpoint: self.state.checkpoints,
                })?;
                self.state.phase = Phase::Paused;
                self.write_checkpoint()
            }
            p => Err(EngineError::Conflict(format!("run is {}", p.as_str()))),
        }
    }

    /// Continue a paused run. Interaction timers restart.
    pub fn resume(&mut self) -> Result<(), EngineError> {
        match self.state.phase {
            Phase::Running => Ok(()),
            Phase::Paused => {
                self.state.phase = Phase::Running;
                let now = Instant::now();
                for r in &self.state.pending_interactions {
                    self.deadlines
                        .insert(r.request_id.clone(), now + Duration::from_secs_f64(r.timeout_s));
                }
                self.emit(EventKind::Resumed)?;
                Ok(())
            }
            p => Err(EngineError::Conflict(format!("run is {}", p.as_str()))),
        }
    }

    /// Change one parameter from the next invocation of its node on.
    pub fn patch_config(&mut self, patch: ConfigPatch) -> Result<ConfigPatch, EngineError> {
        match self.state.phase {
            Phase::Completed | Phase::Failed => {
                return Err(EngineError::Conflict(format!("run is {}", self.state.phase.as_str())))
            }
            Phase::Running
                if self.state.node_status.get(&patch.node_id) != Some(&NodeStatus::AwaitingInteraction) =>
            {
                return Err(EngineError::Conflict("pause required".into()))
            }
            _ => {}
        }
        let applied = self.apply_patch(patch)?;
        self.checkpoint_if_paused()?;
        Ok(applied)
    }

    /// Record a human answer and unblock its node.
    pub fn answer(&mut self, request_id: &str, answer: Value) -> Result<(), EngineError> {
        self.answer_as(request_id, answer, Responder::Human)
    }

    pub fn answer_as(&mut self, request_id: &str, answer: Value, responder: Responder) -> Result<(), EngineError> {
        if self.state.resolved_requests.contains_key(request_id) {
            return Err(EngineError::Gone(format!("request '{request_id}' was already resolved")));
        }
        let Some(req) = self.state.pending_interactions.iter().find(|r| r.request_id == request_id).cloned() else {
            return Err(EngineError::NotFound(format!("no pending request '{request_id}'")));
        };
        if self.state.phase == Phase::Running && self.deadlines.get(request_id).is_some_and(|d| *d <= Instant::now()) {
            self.resolve(request_id, req.default_action.clone(), Responder::TimeoutDefault)?;
            return Err(EngineError::Gone(format!("request '{request_id}' timed out; default applied")));
        }
        let normalized = check_answer(req.kind, &answer).map_err(EngineError::Invalid)?;
        if req.kind == InteractionKind::EditConfig {
            for p in self.patches_in(&normalized)? {
                self.check_patch(&p)?;
            }
        }
        self.resolve(request_id, normalized, responder)?;
        self.checkpoint_if_paused()
    }

    fn emit(&mut self, kind: EventKind) -> Result<(), EngineError> {
        self.events.append(kind)?;
        self.state.events_len = self.events.len();
        Ok(())
    }

    fn write_checkpoint(&mut self) -> Result<PathBuf, EngineError> {
        let k = self.state.checkpoints;
        self.state.checkpoints += 1;
        self.state.events_len = self.events.len();
        let index = self.store.records().iter().map(|r| r.artifact_id.clone()).collect();
        let ck = Checkpoint::new(self.state.clone(), index);
        let path = checkpoint_path(&self.run_dir, k);
        let bytes = serde_json::to_vec_pretty(&ck).expect("checkpoints serialize");
        fs::write(&path, bytes).map_err(io)?;
        Ok(path)
    }

    fn checkpoint_if_paused(&mut self) -> Result<(), EngineError> {
        if matches!(self.state.phase, Phase::Paused | Phase::Completed | Phase::Failed) {
            self.write_checkpoint()?;
        }
        Ok(())
    }

    fn scope_items(&self, loop_id: Option<&str>) -> &[PlanItem] {
        match loop_id {
            None => &self.plan.items,
            Some(l) => self.plan.loop_items(l).expect("planned loop"),
        }
    }

    fn reset_body(&mut self, loop_id: &str) {
        for n in &self.state.spec.nodes {
            if self.topo.loops_of(&n.id).iter().any(|l| l == loop_id) {
                self.state.node_status.insert(n.id.clone(), NodeStatus::Pending);
            }
        }
    }

    fn advance(&mut self) -> Result<(), EngineError> {
        loop {
            let frame = self.state.cursor.last().expect("cursor has a root frame").clone();
            let item = self.scope_items(frame.loop_id.as_deref()).get(frame.pos).cloned();
            match item {
                None => match frame.loop_id {
                    None => {
                        self.state.phase = Phase::Completed;
                        self.emit(EventKind::RunCompleted)?;
                        return Ok(());
                    }
                    Some(l) => match self.end_of_pass(&l)? {
                        Flow::Continue => continue,
                        Flow::Blocked => return Ok(()),
                    },
                },
                Some(PlanItem::Loop { id, .. }) => {
                    self.state.cursor.push(Frame {
                        loop_id: Some(id.clone()),
                        pos: 0,
                        pass: 0,
                    });
                    self.state.iteration.insert(id.clone(), 0);
                    self.reset_body(&id);
                }
                Some(PlanItem::Node { id }) => return self.execute_node(&id),
            }
        }
    }

    fn end_of_pass(&mut self, loop_id: &str) -> Result<Flow, EngineError> {
        let iv = self.state.current_iteration();
        let pass = self.state.cursor.last().expect("loop frame").pass;
        let cond = self.state.spec.loop_spec(loop_id).expect("planned loop").condition.clone();
        let under_cap = cond.max_passes().is_none_or(|c| (pass as u32) + 1 < c);
        let repeat = match &cond {
            LoopCondition::MaxIterations { .. } => under_cap,
            LoopCondition::PredicatePort { node, port, .. } => {
                let rec = self
                    .store
                    .at_port(node, port)
                    .filter(|r| !r.partial && r.iteration.starts_with(&iv))
                    .max_by(|a, b| a.iteration.indices().cmp(&b.iteration.indices()))
                    .cloned();
                let Some(rec) = rec else {
                    self.fail(None, format!("loop '{loop_id}': predicate {node}.{port} was not produced at {iv}"))?;
                    return Ok(Flow::Blocked);
                };
                match self.store.value(&rec)?.as_bool() {
                    Some(v) => v && under_cap,
                    None => {
                        self.fail(None, format!("loop '{loop_id}': predicate {node}.{port} is not boolean"))?;
                        return Ok(Flow::Blocked);
                    }
                }
            }
            LoopCondition::UserDecision {
                prompt,
                default,
                timeout_s,
                ..
            } => {
                if !under_cap {
                    false
                } else {
                    let last = self.plan.last_node_of(loop_id).expect("non-empty body");
                    match self.store.at(&last, &decision_port(loop_id), &iv) {
                        Some(rec) => self.store.value(rec)? == json!("continue"),
                        None => {
                            self.raise_decision(loop_id, &last, &iv, prompt.clone(), *default, *timeout_s)?;
                            return Ok(Flow::Blocked);
                        }
                    }
                }
            }
        };
        self.emit(EventKind::LoopIterated {
            loop_id: loop_id.into(),
            iteration: iv,
            repeat,
        })?;
        if repeat {
            let frame = self.state.cursor.last_mut().expect("loop frame");
            frame.pass += 1;
            frame.pos = 0;
            let pass = frame.pass;
            self.state.iteration.insert(loop_id.into(), pass);
            self.reset_body(loop_id);
        } else {
            self.state.cursor.pop();
            self.state.cursor.last_mut().expect("enclosing frame").pos += 1;
        }
        Ok(Flow::Continue)
    }

    fn raise_decision(
        &mut self,
        loop_id: &str,
        last: &str,
        iv: &IterationVector,
        prompt: String,
        default: Decision,
        timeout_s: f64,
    ) -> Result<(), EngineError> {
        let newest = self
            .store
            .records()
            .iter()
            .filter(|r| r.node_id == last && r.iteration.starts_with(iv))
            .map(|r| r.iteration.clone())
            .max_by(|a, b| a.indices().cmp(&b.indices()));
        let payload = self
            .store
            .records()
            .iter()
            .filter(|r| r.node_id == last && Some(&r.iteration) == newest.as_ref())
            .map(|r| r.artifact_id.clone())
            .collect();
        let port = decision_port(loop_id);
        let req = InteractionRequest {
            request_id: InteractionRequest::make_id(last, iv, &port),
            node_id: last.into(),
            kind: InteractionKind::TerminateDecision,
            prompt,
            payload,
            default_action: json!(default.as_str()),
            timeout_s,
            created_at: Utc::now(),
            iteration: iv.clone(),
            answer_port: port,
            loop_id: Some(loop_id.into()),
        };
        self.raise(req)
    }

    fn raise(&mut self, req: InteractionRequest) -> Result<(), EngineError> {
        self.state
            .node_status
            .insert(req.node_id.clone(), NodeStatus::AwaitingInteraction);
        self.deadlines.insert(
            req.request_id.clone(),
            Instant::now() + Duration::from_secs_f64(req.timeout_s),
        );
        self.state.pending_interactions.push(req.clone());
        self.emit(EventKind::InteractionRaised { request: req })
    }

    fn expire_due(&mut self) -> Result<(), EngineError> {
        let now = Instant::now();
        let due: Vec<InteractionRequest> = self
            .state
            .pending_interactions
            .iter()
            .filter(|r| self.deadlines.get(&r.request_id).is_none_or(|d| *d <= now))
            .cloned()
            .collect();
        for r in due {
            self.resolve(&r.request_id, r.default_action, Responder::TimeoutDefault)?;
        }
        Ok(())
    }

    /// Store an already-normalized answer and unblock its node.
    fn resolve(&mut self, request_id: &str, answer: Value, responder: Responder) -> Result<(), EngineError> {
        let i = self
            .state
            .pending_interactions
            .iter()
            .position(|r| r.request_id == request_id)
            .expect("pending request");
        let req = self.state.pending_interactions.remove(i);
        self.deadlines.remove(request_id);
        let mut art = NewArtifact::value(
            &req.node_id,
            &req.answer_port,
            &req.iteration,
            req.kind.answer_kind(),
            &answer,
            req.payload.clone(),
        );
        art.responder = Some(responder);
        self.store.put(art)?;
        self.state.resolved_requests.insert(request_id.into(), responder);
        self.emit(EventKind::InteractionAnswered {
            request_id: request_id.into(),
            responder,
            answer: answer.clone(),
        })?;
        if req.kind == InteractionKind::EditConfig {
            for p in self.patches_in(&answer)? {
                self.apply_patch(p)?;
            }
        }
        self.state.node_status.insert(req.node_id.clone(), NodeStatus::Done);
        if req.loop_id.is_none() {
            let artifacts = self
                .store
                .records()
                .iter()
                .filter(|r| r.node_id == req.node_id && r.iteration == req.iteration)
                .map(|r| r.artifact_id.clone())
                .collect();
            self.emit(EventKind::NodeFinished {
                node_id: req.node_id.clone(),
                iteration: req.iteration.clone(),
                artifacts,
                diagnostics: BTreeMap::new(),
            })?;
            self.state.cursor.last_mut().expect("cursor").pos += 1;
        }
        Ok(())
    }

    fn patches_in(&self, answer: &Value) -> Result<Vec<ConfigPatch>, EngineError> {
        serde_json::from_value(answer.get("patches").cloned().unwrap_or(json!([])))
            .map_err(|e| EngineError::Invalid(format!("bad config patch: {e}")))
    }

    /// The method and schema a patch addresses, and its typed value.
    fn check_patch(&self, patch: &ConfigPatch) -> Result<(String, String, Value), EngineError> {
        let node = self
            .state
            .spec
            .node(&patch.node_id)
            .ok_or_else(|| EngineError::NotFound(format!("node '{}'", patch.node_id)))?;
        let plugin = self
            .registry
            .get(node.kind, &node.plugin)
            .ok_or_else(|| EngineError::NotFound(format!("plugin '{}'", node.plugin)))?;
        let schema = || EngineError::Invalid(format!("schema error: unknown param_path '{}'", patch.param_path));
        let (method, param) = patch.param_path.split_once('.').ok_or_else(schema)?;
        let methods = effective_methods(node, &plugin.descriptor().methods);
        let spec: &MethodSpec = methods
            .iter()
            .find(|(n, _)| *n == method)
            .and_then(|(_, s)| *s)
            .ok_or_else(schema)?;
        let ps = spec.param_spec(param).ok_or_else(schema)?;
        let value = match (&patch.new_value, &ps.ty) {
            (Value::String(s), ParamType::Number | ParamType::Integer | ParamType::Boolean) => {
                ps.ty.parse_text(s).map_err(|e| EngineError::Invalid(format!("schema error: {e}")))?
            }
            (v, _) => v.clone(),
        };
        ps.ty
            .check(&value)
            .map_err(|e| EngineError::Invalid(format!("schema error: {e}")))?;
        Ok((method.to_string(), param.to_string(), value))
    }

    fn apply_patch(&mut self, patch: ConfigPatch) -> Result<ConfigPatch, EngineError> {
        let (method, param, value) = self.check_patch(&patch)?;
        let iv = self.state.current_iteration();
        let node = self.state.spec.node_mut(&patch.node_id).expect("checked");
        if !node.methods.iter().any(|m| m.name == method) {
            node.methods.push(MethodCall {
                name: method.clone(),
                params: BTreeMap::new(),
            });
        }
        let call = node.methods.iter_mut().find(|m| m.name == method).expect("just ensured");
        call.params.insert(param, ParamType::render(&value));
        let applied = ConfigPatch {
            node_id: patch.node_id,
            param_path: patch.param_path,
            new_value: value,
            applied_at_iteration: iv.clone(),
        };
        let port = format!("patch-{}", self.state.patch_log.len());
        let art = NewArtifact::value(
            &applied.node_id,
            &port,
            &iv,
            DataKind::Record,
            &serde_json::to_value(&applied).expect("patches serialize"),
            Vec::new(),
        );
        self.store.put(art)?;
        self.state.patch_log.push(applied.clone());
        self.emit(EventKind::ConfigPatched { patch: applied.clone() })?;
        Ok(applied)
    }

    fn fail(&mut self, node: Option<&str>, message: String) -> Result<(), EngineError> {
        let iv = self.state.current_iteration();
        self.state.pending_interactions.clear();
        self.deadlines.clear();
        if let Some(n) = node {
            self.state.node_status.insert(n.into(), NodeStatus::Failed);
            self.emit(EventKind::NodeFailed {
                node_id: n.into(),
                iteration: iv,
                message: message.clone(),
            })?;
        }
        self.state.phase = Phase::Failed;
        self.state.failure = Some(message.clone());
        self.emit(EventKind::RunFailed {
            node_id: node.map(str::to_string),
            message,
        })
    }

    /// Root artifacts and parsed value of a folder source. Files are frozen
    /// at first use; later reads must see the same bytes.
    fn folder_input(&mut self, src: &FolderSource) -> Result<(Value, Vec<String>), String> {
        if let Some(hit) = self.folder_cache.get(src) {
            return Ok(hit.clone());
        }
        let files = load_folder(&self.state.base_dir, src).map_err(|e| e.to_string())?;
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for f in files {
            let port = format!("{}/{}", src.path.trim_end_matches('/'), f.name);
            let mut parts = vec![(port.clone(), src.format, f.bytes)];
            if let Some(side) = f.sidecar {
                parts.push((format!("{port}.roles.json"), DataFormat::Json, side));
            }
            for (port, format, bytes) in parts {
                let root = IterationVector::root();
                if let Some(existing) = self.store.at(INPUTS_NODE, &port, &root) {
                    if existing.artifact_id != content_hash(&bytes) {
                        return Err(format!("input file {port} changed during the run"));
                    }
                    ids.push(existing.artifact_id.clone());
                    continue;
                }
                let rec = self
                    .store
                    .put(NewArtifact {
                        node_id: INPUTS_NODE.into(),
                        port,
                        iteration: root,
                        kind: if format == DataFormat::Csv { DataKind::Table } else { DataKind::Record },
                        format,
                        bytes,
                        parents: Vec::new(),
                        responder: None,
                        partial: false,
                    })
                    .map_err(|e| e.to_string())?;
                ids.push(rec.artifact_id);
            }
            values.push(f.value);
        }
        let value = if values.len() == 1 { values.pop().expect("one") } else { Value::Array(values) };
        self.folder_cache.insert(src.clone(), (value.clone(), ids.clone()));
        Ok((value, ids))
    }

    fn execute_node(&mut self, id: &str) -> Result<(), EngineError> {
        let iv = self.state.current_iteration();
        let node = self.state.spec.node(id).cloned().expect("planned node");
        let plugin = Arc::clone(
            self.registry
                .get(node.kind, &node.plugin)
                .ok_or_else(|| EngineError::NotFound(format!("plugin '{}'", node.plugin)))?,
        );
        let desc = plugin.descriptor().clone();
        self.state.node_status.insert(id.into(), NodeStatus::Running);
        self.emit(EventKind::NodeStarted {
            node_id: id.into(),
            iteration: iv.clone(),
        })?;

        let calls: Vec<(String, MethodSpec, BTreeMap<String, String>)> = effective_methods(&node, &desc.methods)
            .into_iter()
            .enumerate()
            .map(|(i, (name, spec))| {
                let params = node.methods.get(i).map(|c| c.params.clone()).unwrap_or_default();
                (name.to_string(), spec.expect("validated method").clone(), params)
            })
            .collect();

        let mut produced: BTreeMap<String, (Value, String)> = BTreeMap::new();
        let mut writes: Vec<NewArtifact> = Vec::new();
        let mut diagnostics = BTreeMap::new();
        let mut proposal = None;
        let mut failure: Option<String> = None;

        for (mname, mspec, text_params) in &calls {
            let mut req = InvokeRequest::new(&node.plugin, mname);
            req.iteration = iv.clone();
            req.rng_key = stream_key(self.state.seed, id, &iv, mname);
            match mspec.resolve_text_params(text_params) {
                Ok(mut params) => {
                    for p in &mspec.params {
                        if p.ty == ParamType::Path {
                            if let Some(Value::String(s)) = params.get(&p.name) {
                                let abs = self.state.base_dir.join(s);
                                params.insert(p.name.clone(), json!(abs.to_string_lossy()));
                            }
                        }
                    }
                    req.params = params;
                }
                Err(e) => {
                    failure = Some(format!("method '{mname}': {e}"));
                    break;
                }
            }
            let mut parents = Vec::new();
            for port in &mspec.input_ports {
                let binding = self.state.spec.inputs_of(id).find(|b| b.target.port == port.name).cloned();
                match binding {
                    Some(b) => match &b.source {
                        BindingSource::Folder(src) => match self.folder_input(src) {
                            Ok((v, ids)) => {
                                req.inputs.insert(port.name.clone(), v);
                                parents.extend(ids);
                            }
                            Err(e) => {
                                failure = Some(format!("input '{}': {e}", port.name));
                                break;
                            }
                        },
                        BindingSource::NodeOutput(_) => match resolve_node_output(&self.store, &self.topo, &b, &iv) {
                            Ok(Some(rec)) => {
                                req.inputs.insert(port.name.clone(), self.store.value(rec)?);
                                req.input_paths.insert(port.name.clone(), self.store.path_of(rec));
                                parents.push(rec.artifact_id.clone());
                            }
                            Ok(None) => {}
                            Err(e) => {
                                failure = Some(format!("input '{}': {e}", port.name));
                                break;
                            }
                        },
                    },
                    None => {
                        if let Some((v, aid)) = produced.get(&port.name) {
                            req.inputs.insert(port.name.clone(), v.clone());
                            parents.push(aid.clone());
                        }
                    }
                }
            }
            if failure.is_some() {
                break;
            }
            let result = self.registry.invoke(node.kind, &req);
            for (port, value) in &result.outputs {
                let Some(kind) = mspec.output_ports.iter().find(|p| &p.name == port).map(|p| p.kind) else {
                    continue;
                };
                let art = NewArtifact::value(id, port, &iv, kind, value, parents.clone());
                produced.insert(port.clone(), (value.clone(), content_hash(&art.bytes)));
                writes.push(art);
            }
            diagnostics.extend(result.diagnostics.clone());
            if let Some(msg) = result.error_message() {
                failure = Some(format!("method '{mname}': {msg}"));
                break;
            }
            if let Some(p) = result.interaction {
                let spec = mspec.interaction.clone().expect("conformance checked");
                proposal = Some((p, spec));
            }
        }

        let partial = failure.is_some();
        let mut stored = Vec::new();
        for mut w in writes {
            w.partial = partial;
            stored.push(self.store.put(w)?);
        }
        if let Some(msg) = failure {
            return self.fail(Some(id), msg);
        }

        let Some((p, spec)) = proposal else {
            self.state.node_status.insert(id.into(), NodeStatus::Done);
            self.emit(EventKind::NodeFinished {
                node_id: id.into(),
                iteration: iv,
                artifacts: stored.into_iter().map(|r| r.artifact_id).collect(),
                diagnostics,
            })?;
            self.state.cursor.last_mut().expect("cursor").pos += 1;
            return Ok(());
        };

        let mut payload = Vec::new();
        for port in &p.payload_ports {
            match stored.iter().find(|r| &r.port == port) {
                Some(r) => payload.push(r.artifact_id.clone()),
                None => return self.fail(Some(id), format!("interaction payload names unknown output '{port}'")),
            }
        }
        let default_action = match check_answer(spec.kind, &p.default_action) {
            Ok(v) => v,
            Err(e) => return self.fail(Some(id), format!("invalid default action: {e}")),
        };
        let timeout_s = p.timeout_s.unwrap_or(DEFAULT_TIMEOUT_S);
        if !(timeout_s.is_finite() && timeout_s >= 0.0) {
            return self.fail(Some(id), format!("invalid interaction timeout {timeout_s}"));
        }
        let req = InteractionRequest {
            request_id: InteractionRequest::make_id(id, &iv, &spec.answer_port),
            node_id: id.into(),
            kind: spec.kind,
            prompt: p.prompt,
            payload,
            default_action,
            timeout_s,
            created_at: Utc::now(),
            iteration: iv,
            answer_port: spec.answer_port,
            loop_id: None,
        };
        let rid = req.request_id.clone();
        self.raise(req)?;
        if let Some(sim) = p.simulated_answer {
            match check_answer(spec.kind, &sim) {
                Ok(v) => self.resolve(&rid, v, Responder::Simulated)?,
                Err(e) => return self.fail(Some(id), format!("invalid simulated answer: {e}")),
            }
        }
        Ok(())
    }
}
