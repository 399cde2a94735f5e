//! Runs a validated workflow: planning, stepping, loops, interactions,
//! configuration patches, and checkpoints.

mod events;
mod manager;
mod plan;
mod run;
mod state;

pub use events::{EngineEvent, EventKind, EventLog};
pub use manager::{default_runs_dir, RunManager, RunView, RUNS_DIR_ENV};
pub use plan::{plan, ExecutionPlan, PlanError, PlanItem};
pub use run::{
    check_answer, checkpoint_path, latest_checkpoint, make_headless, Run, RunOptions, DEFAULT_TIMEOUT_S,
    TIMEOUT_PARAM,
};
pub use state::{Checkpoint, ConfigPatch, EngineError, Frame, InteractionRequest, NodeStatus, Phase, RunState};
