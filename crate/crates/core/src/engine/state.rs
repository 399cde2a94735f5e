use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datastore::{Responder, StoreError};
use crate::dsl::{ValidationReport, WorkflowSpec};
use crate::iteration::IterationVector;
use crate::plugin::InteractionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Pending,
    Running,
    AwaitingInteraction,
    Done,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Running,
    Paused,
    Completed,
    Failed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Running => "running",
            Phase::Paused => "paused",
            Phase::Completed => "completed",
            Phase::Failed => "failed",
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }
}

/// A decision the run is waiting on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRequest {
    pub request_id: String,
    pub node_id: String,
    pub kind: InteractionKind,
    pub prompt: String,
    /// Artifact ids shown to the human.
    pub payload: Vec<String>,
    pub default_action: Value,
    pub timeout_s: f64,
    pub created_at: DateTime<Utc>,
    pub iteration: IterationVector,
    /// Where the answer is stored on `node_id`.
    pub answer_port: String,
    /// Set when the answer decides whether this loop repeats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_id: Option<String>,
}

impl InteractionRequest {
    pub fn make_id(node: &str, iteration: &IterationVector, port: &str) -> String {
        format!("{node}--{iteration}--{port}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPatch {
    pub node_id: String,
    /// `method.param`.
    pub param_path: String,
    pub new_value: Value,
    #[serde(default)]
    pub applied_at_iteration: IterationVector,
}

/// Position inside one scope of the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// `None` for the top level.
    pub loop_id: Option<String>,
    pub pos: usize,
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub spec: WorkflowSpec,
    pub seed: u64,
    pub base_dir: PathBuf,
    pub node_status: BTreeMap<String, NodeStatus>,
    pub iteration: BTreeMap<String, usize>,
    /// Streams are derived per invocation from the root seed.
    pub rng_state: Value,
    pub phase: Phase,
    pub pending_interactions: Vec<InteractionRequest>,
    pub patch_log: Vec<ConfigPatch>,
    pub cursor: Vec<Frame>,
    pub resolved_requests: BTreeMap<String, Responder>,
    pub plugin_versions: BTreeMap<String, String>,
    pub events_len: u64,
    pub checkpoints: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunState {
    pub fn current_iteration(&self) -> IterationVector {
        IterationVector(
            self.cursor
                .iter()
                .filter_map(|f| f.loop_id.as_ref().map(|l| (l.clone(), f.pass)))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_state: RunState,
    pub artifact_index: Vec<String>,
    pub content_hash: String,
}

impl Checkpoint {
    pub fn new(run_state: RunState, artifact_index: Vec<String>) -> Checkpoint {
        let content_hash = Checkpoint::hash_of(&run_state, &artifact_index);
        Checkpoint {
            run_state,
            artifact_index,
            content_hash,
        }
    }

    pub fn hash_of(run_state: &RunState, artifact_index: &[String]) -> String {
        let body = serde_json::json!({"run_state": run_state, "artifact_index": artifact_index});
        hex::encode(Sha256::digest(serde_json::to_vec(&body).expect("state serializes")))
    }

    pub fn verify(&self) -> Result<(), EngineError> {
        if Checkpoint::hash_of(&self.run_state, &self.artifact_index) == self.content_hash {
            Ok(())
        } else {
            Err(EngineError::Integrity("checkpoint hash mismatch".into()))
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("planning error: {0}")]
    Plan(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("gone: {0}")]
    Gone(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(String),
}
