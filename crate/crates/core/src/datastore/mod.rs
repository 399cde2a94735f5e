//! Immutable artifacts with provenance, binding resolution, and the tabular
//! datasets that seed a workflow.

mod dataset;
mod store;

use serde_json::{json, Value};
use thiserror::Error;

pub use dataset::{
    detect_problem_context, load_folder, Column, ColumnRole, ColumnType, Dataset, FolderFile, ProblemContext, RolesSidecar,
};
pub use store::{artifact_path, content_hash, created_at_text, ArtifactRecord, ArtifactStore, NewArtifact, Responder};

use crate::dsl::topology::{EdgeKind, Topology};
use crate::dsl::DataBinding;
use crate::iteration::IterationVector;
use crate::plugin::DataKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("immutability violation: {0}")]
    Immutable(String),
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid artifact: {0}")]
    Invalid(String),
    #[error("resolution error: {0}")]
    Resolve(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Node that owns folder-source root artifacts.
pub const INPUTS_NODE: &str = "@inputs";

/// The artifact a node-output binding reads for a consumer running at
/// `consumer_iter`. `Ok(None)` means a back-edge with nothing earlier to read.
///
/// A forward edge reads the source's pass matching the consumer on every
/// loop they share; loops enclosing only the source contribute their last
/// pass. A back-edge reads the most recent source output from strictly
/// before the consumer's position on the shared loops, which may lie in an
/// earlier pass of an enclosing loop.
pub fn resolve_node_output<'a>(
    store: &'a ArtifactStore,
    topo: &Topology,
    binding: &DataBinding,
    consumer_iter: &IterationVector,
) -> Result<Option<&'a ArtifactRecord>, StoreError> {
    let Some(src) = binding.source_node() else {
        return Err(StoreError::Resolve("folder sources are loaded, not resolved".into()));
    };
    let common = topo.common_loops(&src.node, &binding.target.node);
    let prefix = IterationVector(consumer_iter.0.iter().take(common.len()).cloned().collect());
    if prefix.0.len() != common.len() || prefix.0.iter().zip(&common).any(|((l, _), c)| l != c) {
        return Err(StoreError::Resolve(format!(
            "iteration {consumer_iter} does not place node '{}' inside its loops",
            binding.target.node
        )));
    }
    let depth = topo.loops_of(&src.node).len();
    let done = store
        .at_port(&src.node, &src.port)
        .filter(move |r| !r.partial && r.iteration.0.len() == depth);
    let newest = |a: &&ArtifactRecord, b: &&ArtifactRecord| a.iteration.indices().cmp(&b.iteration.indices());
    if let Some(EdgeKind::Back { .. }) = topo.edge_kind(binding) {
        let here = prefix.indices();
        return Ok(done
            .filter(|r| r.iteration.indices()[..here.len()] < here[..])
            .max_by(newest));
    }
    done.filter(|r| r.iteration.starts_with(&prefix))
        .max_by(newest)
        .map(Some)
        .ok_or_else(|| StoreError::Resolve(format!("source not done: {}.{} for {}", src.node, src.port, prefix)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Every scalar artifact of a run as rows of (node, port, iteration, value).
pub fn export_scalars(store: &ArtifactStore, format: ExportFormat) -> Result<String, StoreError> {
    let mut rows = Vec::new();
    for r in store.records().iter().filter(|r| r.kind == DataKind::Scalar) {
        let v = store.value(r)?;
        rows.push((r.node_id.clone(), r.port.clone(), r.iteration.to_string(), v));
    }
    Ok(match format {
        ExportFormat::Json => {
            let arr: Vec<Value> = rows
                .into_iter()
                .map(|(n, p, i, v)| json!({"node": n, "port": p, "iteration": i, "value": v}))
                .collect();
            serde_json::to_string_pretty(&arr).expect("values serialize") + "\n"
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(["node", "port", "iteration", "value"]).expect("in-memory write");
            for (n, p, i, v) in rows {
                w.write_record([n, p, i, v.to_string()]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    })
}
