use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

use super::events::EventLog;
use super::plan::ExecutionPlan;
use super::run::{Run, RunOptions};
use super::state::{ConfigPatch, EngineError, Phase, RunState};
use crate::datastore::{artifact_path, ArtifactRecord};
use crate::dsl::WorkflowSpec;
use crate::plugin::PluginRegistry;

/// Environment variable naming the directory runs are created in.
pub const RUNS_DIR_ENV: &str = "LABLOOM_RUNS_DIR";

/// `$LABLOOM_RUNS_DIR`, or `runs` in the working directory.
pub fn default_runs_dir() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Consistent read-only picture of a run as of its last completed command.
#[derive(Debug, Clone, Serialize)]
pub struct RunView {
    pub state: RunState,
    pub artifacts: Vec<ArtifactRecord>,
    pub plan: ExecutionPlan,
    pub run_dir: PathBuf,
    /// Set when the worker stopped on an engine error.
    pub engine_error: Option<String>,
}

type Reply<T> = mpsc::Sender<Result<T, EngineError>>;

enum Command {
    Pause(Reply<PathBuf>),
    Resume(Reply<()>),
    Patch(ConfigPatch, Reply<ConfigPatch>),
    Answer(String, Value, Reply<()>),
    Stop,
}

struct Handle {
    view: Arc<RwLock<RunView>>,
    events: Arc<EventLog>,
    tx: mpsc::Sender<Command>,
    thread: Option<JoinHandle<()>>,
}

/// Runs executing concurrently, one worker thread each. Every mutation of a
/// run is a command on its queue; readers get snapshots.
pub struct RunManager {
    registry: Arc<PluginRegistry>,
    runs_dir: PathBuf,
    runs: Mutex<BTreeMap<String, Handle>>,
}

impl std::fmt::Debug for RunManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunManager").field("runs_dir", &self.runs_dir).finish()
    }
}

fn publish(view: &RwLock<RunView>, run: &Run, error: Option<String>) {
    let mut v = view.write().expect("view lock");
    v.state = run.state().clone();
    let have = v.artifacts.len();
    v.artifacts.extend(run.store().records()[have..].iter().cloned());
    if error.is_some() {
        v.engine_error = error;
    }
}

/// A command's reply is sent only after its effect is published.
fn worker(mut run: Run, view: Arc<RwLock<RunView>>, rx: mpsc::Receiver<Command>) {
    loop {
        let cmd = if run.phase() == Phase::Running {
            let wait = if run.state().pending_interactions.is_empty() {
                Duration::ZERO
            } else {
                run.next_deadline()
                    .map(|d| d.saturating_duration_since(Instant::now()))
                    .unwrap_or(Duration::ZERO)
            };
            match rx.recv_timeout(wait) {
                Ok(c) => Some(c),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return,
            }
        } else {
            match rx.recv() {
                Ok(c) => Some(c),
                Err(_) => return,
            }
        };
        match cmd {
            Some(Command::Stop) => return,
            Some(Command::Pause(reply)) => {
                let r = run.pause();
                publish(&view, &run, None);
                let _ = reply.send(r);
            }
            Some(Command::Resume(reply)) => {
                let r = run.resume();
                publish(&view, &run, None);
                let _ = reply.send(r);
            }
            Some(Command::Patch(p, reply)) => {
                let r = run.patch_config(p);
                publish(&view, &run, None);
                let _ = reply.send(r);
            }
            Some(Command::Answer(rid, answer, reply)) => {
                let r = run.answer(&rid, answer);
                publish(&view, &run, None);
                let _ = reply.send(r);
            }
            None => {
                if let Err(e) = run.step() {
                    publish(&view, &run, Some(e.to_string()));
                    while let Ok(c) = rx.recv() {
                        if matches!(c, Command::Stop) {
                            return;
                        }
                    }
                    return;
                }
                publish(&view, &run, None);
            }
        }
    }
}

impl RunManager {
    pub fn new(registry: Arc<PluginRegistry>, runs_dir: impl Into<PathBuf>) -> RunManager {
        RunManager {
            registry,
            runs_dir: runs_dir.into(),
            runs: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn registry(&self) -> &Arc<PluginRegistry> {
        &self.registry
    }

    pub fn runs_dir(&self) -> &Path {
        &self.runs_dir
    }

    /// Validate and launch a run; returns its id.
    pub fn start(&self, spec: WorkflowSpec, opts: RunOptions) -> Result<String, EngineError> {
        let run = Run::start(Arc::clone(&self.registry), spec, &self.runs_dir, opts)?;
        self.attach(run)
    }

    /// Continue a run from a checkpoint file.
    pub fn resume_checkpoint(&self, checkpoint: &Path) -> Result<String, EngineError> {
        let run = Run::load(Arc::clone(&self.registry), checkpoint)?;
        if self.runs.lock().expect("runs lock").contains_key(run.run_id()) {
            return Err(EngineError::Conflict(format!("run '{}' is already active", run.run_id())));
        }
        let mut run = run;
        if run.phase().is_finished() {
            return Err(EngineError::Conflict(format!("run already {}", run.phase().as_str())));
        }
        if run.phase() == Phase::Running {
            run.pause()?;
        }
        run.resume()?;
        self.attach(run)
    }

    /// Hand an existing run to a worker thread.
    pub fn attach(&self, run: Run) -> Result<String, EngineError> {
        let id = run.run_id().to_string();
        let mut runs = self.runs.lock().expect("runs lock");
        if runs.contains_key(&id) {
            return Err(EngineError::Conflict(format!("run '{id}' is already active")));
        }
        let view = Arc::new(RwLock::new(RunView {
            state: run.state().clone(),
            artifacts: run.store().records().to_vec(),
            plan: run.plan().clone(),
            run_dir: run.run_dir().to_path_buf(),
            engine_error: None,
        }));
        let events = Arc::clone(run.events());
        let (tx, rx) = mpsc::channel();
        let v = Arc::clone(&view);
        let thread = std::thread::Builder::new()
            .name(format!("run-{id}"))
            .spawn(move || worker(run, v, rx))
            .map_err(|e| EngineError::Io(e.to_string()))?;
        runs.insert(
            id.clone(),
            Handle {
                view,
                events,
                tx,
                thread: Some(thread),
            },
        );
        Ok(id)
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.lock().expect("runs lock").keys().cloned().collect()
    }

    fn with_handle<T>(&self, run_id: &str, f: impl FnOnce(&Handle) -> T) -> Result<T, EngineError> {
        let runs = self.runs.lock().expect("runs lock");
        let h = runs
            .get(run_id)
            .ok_or_else(|| EngineError::NotFound(format!("unknown run '{run_id}'")))?;
        Ok(f(h))
    }

    pub fn view(&self, run_id: &str) -> Result<RunView, EngineError> {
        self.with_handle(run_id, |h| h.view.read().expect("view lock").clone())
    }

    pub fn events(&self, run_id: &str) -> Result<Arc<EventLog>, EngineError> {
        self.with_handle(run_id, |h| Arc::clone(&h.events))
    }

    fn command<T>(&self, run_id: &str, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, EngineError> {
        let (tx, rx) = mpsc::channel();
        self.with_handle(run_id, |h| h.tx.send(make(tx)))?
            .map_err(|_| EngineError::Conflict(format!("run '{run_id}' has stopped")))?;
        rx.recv()
            .map_err(|_| EngineError::Conflict(format!("run '{run_id}' has stopped")))?
    }

    pub fn pause(&self, run_id: &str) -> Result<PathBuf, EngineError> {
        self.command(run_id, Command::Pause)
    }

    pub fn resume(&self, run_id: &str) -> Result<(), EngineError> {
        self.command(run_id, Command::Resume)
    }

    pub fn patch_config(&self, run_id: &str, patch: ConfigPatch) -> Result<ConfigPatch, EngineError> {
        self.command(run_id, |r| Command::Patch(patch, r))
    }

    pub fn answer(&self, run_id: &str, request_id: &str, answer: Value) -> Result<(), EngineError> {
        self.command(run_id, |r| Command::Answer(request_id.to_string(), answer, r))
    }

    /// Record and stored bytes of one artifact.
    pub fn artifact(&self, run_id: &str, artifact_id: &str) -> Result<(ArtifactRecord, Vec<u8>), EngineError> {
        let view = self.view(run_id)?;
        let rec = view
            .artifacts
            .iter()
            .find(|r| r.artifact_id == artifact_id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound(format!("artifact '{artifact_id}'")))?;
        let bytes = std::fs::read(artifact_path(&view.run_dir, &rec)).map_err(|e| EngineError::Io(e.to_string()))?;
        Ok((rec, bytes))
    }

    /// Block until the run completes or fails, or `timeout` passes.
    pub fn wait(&self, run_id: &str, timeout: Duration) -> Result<Phase, EngineError> {
        let end = Instant::now() + timeout;
        loop {
            let v = self.view(run_id)?;
            if v.state.phase.is_finished() || v.engine_error.is_some() {
                return Ok(v.state.phase);
            }
            if Instant::now() >= end {
                return Ok(v.state.phase);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// Stop the worker of one run, leaving its files in place.
    pub fn detach(&self, run_id: &str) -> Result<(), EngineError> {
        let mut h = self
            .runs
            .lock()
            .expect("runs lock")
            .remove(run_id)
            .ok_or_else(|| EngineError::NotFound(format!("unknown run '{run_id}'")))?;
        let _ = h.tx.send(Command::Stop);
        if let Some(t) = h.thread.take() {
            let _ = t.join();
        }
        Ok(())
    }
}

impl Drop for RunManager {
    fn drop(&mut self) {
        let mut runs = self.runs.lock().expect("runs lock");
        for h in runs.values() {
            let _ = h.tx.send(Command::Stop);
        }
        for h in runs.values_mut() {
            if let Some(t) = h.thread.take() {
                let _ = t.join();
            }
        }
    }
}
