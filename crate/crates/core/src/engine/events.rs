use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

use super::state::{ConfigPatch, EngineError, InteractionRequest};
use crate::datastore::Responder;
use crate::iteration::IterationVector;
use crate::plugin::Diagnostic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventKind {
    NodeStarted {
        node_id: String,
        iteration: IterationVector,
    },
    NodeFinished {
        node_id: String,
        iteration: IterationVector,
        artifacts: Vec<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        diagnostics: BTreeMap<String, Diagnostic>,
    },
    NodeFailed {
        node_id: String,
        iteration: IterationVector,
        message: String,
    },
    LoopIterated {
        loop_id: String,
        iteration: IterationVector,
        #[serde(rename = "continue")]
        repeat: bool,
    },
    InteractionRaised {
        request: InteractionRequest,
    },
    InteractionAnswered {
        request_id: String,
        responder: Responder,
        answer: Value,
    },
    ConfigPatched {
        patch: ConfigPatch,
    },
    Paused {
        checkpoint: usize,
    },
    Resumed,
    RunCompleted,
    RunFailed {
        node_id: Option<String>,
        message: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::NodeStarted { .. } => "node-started",
            EventKind::NodeFinished { .. } => "node-finished",
            EventKind::NodeFailed { .. } => "node-failed",
            EventKind::LoopIterated { .. } => "loop-iterated",
            EventKind::InteractionRaised { .. } => "interaction-raised",
            EventKind::InteractionAnswered { .. } => "interaction-answered",
            EventKind::ConfigPatched { .. } => "config-patched",
            EventKind::Paused { .. } => "paused",
            EventKind::Resumed => "resumed",
            EventKind::RunCompleted => "run-completed",
            EventKind::RunFailed { .. } => "run-failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::RunCompleted | EventKind::RunFailed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub index: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Append-only event history mirrored to `events.jsonl`. Subscribers watch
/// the length and read from any index.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    events: RwLock<Vec<EngineEvent>>,
    len: watch::Sender<u64>,
}

impl EventLog {
    pub fn open(run_dir: &Path) -> Result<EventLog, EngineError> {
        let path = run_dir.join("events.jsonl");
        let mut events = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| EngineError::Io(e.to_string()))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let ev: EngineEvent = serde_json::from_str(line)
                    .map_err(|e| EngineError::Integrity(format!("events line {}: {e}", i + 1)))?;
                events.push(ev);
            }
        } else {
            fs::write(&path, b"").map_err(|e| EngineError::Io(e.to_string()))?;
        }
        let (len, _) = watch::channel(events.len() as u64);
        Ok(EventLog {
            path,
            events: RwLock::new(events),
            len,
        })
    }

    pub fn append(&self, kind: EventKind) -> Result<EngineEvent, EngineError> {
        let mut events = self.events.write().expect("event log lock");
        let ev = EngineEvent {
            index: events.len() as u64,
            at: Utc::now(),
            kind,
        };
        let mut line = serde_json::to_string(&ev).expect("events serialize");
        line.push('\n');
        OpenOptions::new()
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| EngineError::Io(e.to_string()))?;
        events.push(ev.clone());
        let n = events.len() as u64;
        drop(events);
        self.len.send_replace(n);
        Ok(ev)
    }

    pub fn len(&self) -> u64 {
        self.events.read().expect("event log lock").len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn since(&self, index: u64) -> Vec<EngineEvent> {
        let events = self.events.read().expect("event log lock");
        events.iter().skip(index as usize).cloned().collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.len.subscribe()
    }
}
