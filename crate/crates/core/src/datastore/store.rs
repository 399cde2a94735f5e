use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::StoreError;
use crate::dsl::DataFormat;
use crate::iteration::IterationVector;
use crate::plugin::DataKind;

/// Who supplied an interaction answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Responder {
    Human,
    TimeoutDefault,
    Simulated,
}

impl Responder {
    pub fn as_str(self) -> &'static str {
        match self {
            Responder::Human => "human",
            Responder::TimeoutDefault => "timeout-default",
            Responder::Simulated => "simulated",
        }
    }
}

/// One immutable output of one node at one iteration vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub artifact_id: String,
    pub run_id: String,
    pub node_id: String,
    pub port: String,
    pub iteration: IterationVector,
    pub kind: DataKind,
    pub format: DataFormat,
    pub created_at: DateTime<Utc>,
    pub parent_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder: Option<Responder>,
    /// Written by a node that then failed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

#[derive(Debug, Clone)]
pub struct NewArtifact {
    pub node_id: String,
    pub port: String,
    pub iteration: IterationVector,
    pub kind: DataKind,
    pub format: DataFormat,
    pub bytes: Vec<u8>,
    pub parents: Vec<String>,
    pub responder: Option<Responder>,
    pub partial: bool,
}

impl NewArtifact {
    /// A JSON value wrapped with its location, so equal values stored at
    /// different places hash differently.
    pub fn value(node_id: &str, port: &str, iteration: &IterationVector, kind: DataKind, value: &Value, parents: Vec<String>) -> Self {
        let envelope = json!({
            "node": node_id,
            "port": port,
            "iteration": iteration.to_string(),
            "kind": kind.as_str(),
            "value": value,
        });
        NewArtifact {
            node_id: node_id.into(),
            port: port.into(),
            iteration: iteration.clone(),
            kind,
            format: DataFormat::Json,
            bytes: serde_json::to_vec(&envelope).expect("values serialize"),
            parents,
            responder: None,
            partial: false,
        }
    }
}

/// `<run_dir>/artifacts/<node>/<iteration>/<port>.<ext>`.
pub fn artifact_path(run_dir: &Path, r: &ArtifactRecord) -> PathBuf {
    run_dir
        .join("artifacts")
        .join(&r.node_id)
        .join(r.iteration.to_string())
        .join(format!("{}.{}", file_safe(&r.port), r.format.as_str()))
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_safe(port: &str) -> String {
    port.replace(['/', '\\'], "__")
}

/// Append-only, content-addressed artifact store for one run.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    run_id: String,
    root: PathBuf,
    records: Vec<ArtifactRecord>,
    by_id: BTreeMap<String, usize>,
    by_location: BTreeMap<(String, String, IterationVector), usize>,
}

impl ArtifactStore {
    /// Start an empty store under `run_dir`.
    pub fn create(run_id: &str, run_dir: &Path) -> Result<ArtifactStore, StoreError> {
        fs::create_dir_all(run_dir.join("artifacts")).map_err(|e| StoreError::Io(e.to_string()))?;
        let prov = run_dir.join("provenance.jsonl");
        if !prov.exists() {
            fs::write(&prov, b"").map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let mut s = ArtifactStore {
            run_id: run_id.into(),
            root: run_dir.to_path_buf(),
            records: Vec::new(),
            by_id: BTreeMap::new(),
            by_location: BTreeMap::new(),
        };
        s.load_index()?;
        Ok(s)
    }

    /// Reopen an existing store from its provenance log.
    pub fn open(run_dir: &Path) -> Result<ArtifactStore, StoreError> {
        let prov = run_dir.join("provenance.jsonl");
        if !prov.exists() {
            return Err(StoreError::NotFound(format!("{} has no provenance log", run_dir.display())));
        }
        let run_id = run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut s = ArtifactStore {
            run_id,
            root: run_dir.to_path_buf(),
            records: Vec::new(),
            by_id: BTreeMap::new(),
            by_location: BTreeMap::new(),
        };
        s.load_index()?;
        if let Some(r) = s.records.first() {
            s.run_id = r.run_id.clone();
        }
        Ok(s)
    }

    fn load_index(&mut self) -> Result<(), StoreError> {
        let text = fs::read_to_string(self.root.join("provenance.jsonl")).map_err(|e| StoreError::Io(e.to_string()))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ArtifactRecord =
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt(format!("provenance line {}: {e}", i + 1)))?;
            self.index(r);
        }
        Ok(())
    }

    fn index(&mut self, r: ArtifactRecord) {
        let i = self.records.len();
        self.by_id.insert(r.artifact_id.clone(), i);
        self.by_location.insert((r.node_id.clone(), r.port.clone(), r.iteration.clone()), i);
        self.records.push(r);
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path_of(&self, r: &ArtifactRecord) -> PathBuf {
        artifact_path(&self.root, r)
    }

    /// Write bytes and append the record. Identical bytes already stored are
    /// returned as the existing record when they carry no parents.
    pub fn put(&mut self, a: NewArtifact) -> Result<ArtifactRecord, StoreError> {
        if a.bytes.is_empty() {
            return Err(StoreError::Invalid("empty payload".into()));
        }
        let loc = (a.node_id.clone(), a.port.clone(), a.iteration.clone());
        if self.by_location.contains_key(&loc) {
            return Err(StoreError::Immutable(format!("{}.{} at {}", a.node_id, a.port, a.iteration)));
        }
        for p in &a.parents {
            if !self.by_id.contains_key(p) {
                return Err(StoreError::Provenance(format!("unknown parent '{p}'")));
            }
        }
        let id = content_hash(&a.bytes);
        if let Some(&i) = self.by_id.get(&id) {
            if a.parents.is_empty() && self.records[i].parent_ids.is_empty() {
                return Ok(self.records[i].clone());
            }
            return Err(StoreError::Immutable(format!("content {id} is already stored elsewhere")));
        }
        let mut parents = a.parents;
        parents.sort();
        parents.dedup();
        let record = ArtifactRecord {
            artifact_id: id,
            run_id: self.run_id.clone(),
            node_id: a.node_id,
            port: a.port,
            iteration: a.iteration,
            kind: a.kind,
            format: a.format,
            created_at: Utc::now(),
            parent_ids: parents,
            responder: a.responder,
            partial: a.partial,
        };
        let path = self.path_of(&record);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        fs::write(&path, &a.bytes).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        OpenOptions::new()
            .append(true)
            .open(self.root.join("provenance.jsonl"))
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| StoreError::Io(e.to_string()))?;
        self.index(record.clone());
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Option<&ArtifactRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn at(&self, node: &str, port: &str, iteration: &IterationVector) -> Option<&ArtifactRecord> {
        self.by_location
            .get(&(node.to_string(), port.to_string(), iteration.clone()))
            .map(|&i| &self.records[i])
    }

    /// Records at (node, port) in any iteration.
    pub fn at_port(&self, node: &str, port: &str) -> impl Iterator<Item = &ArtifactRecord> + '_ {
        let (node, port) = (node.to_string(), port.to_string());
        self.by_location
            .range((node.clone(), port.clone(), IterationVector::root())..)
            .take_while(move |((n, p, _), _)| *n == node && *p == port)
            .map(|(_, &i)| &self.records[i])
    }

    pub fn bytes(&self, r: &ArtifactRecord) -> Result<Vec<u8>, StoreError> {
        fs::read(self.path_of(r)).map_err(|e| StoreError::Io(format!("{}: {e}", self.path_of(r).display())))
    }

    /// Payload as JSON: the envelope's value, or the parsed raw file.
    pub fn value(&self, r: &ArtifactRecord) -> Result<Value, StoreError> {
        let bytes = self.bytes(r)?;
        match r.format {
            DataFormat::Csv => Ok(Value::String(String::from_utf8_lossy(&bytes).into_owned())),
            DataFormat::Json => {
                let v: Value = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                if r.node_id.starts_with('@') {
                    return Ok(v);
                }
                v.get("value")
                    .cloned()
                    .ok_or_else(|| StoreError::Corrupt(format!("{} lacks an envelope", r.artifact_id)))
            }
        }
    }

    /// Re-hash every stored file.
    pub fn verify(&self) -> Result<(), StoreError> {
        for r in &self.records {
            let bytes = self.bytes(r).map_err(|_| StoreError::Integrity(format!("artifact {} is missing", r.artifact_id)))?;
            if content_hash(&bytes) != r.artifact_id {
                return Err(StoreError::Integrity(format!("artifact {} does not match its hash", r.artifact_id)));
            }
        }
        Ok(())
    }

    /// All transitive ancestors and the artifact itself, parents first, ties
    /// by id.
    pub fn provenance_chain(&self, id: &str) -> Result<Vec<&ArtifactRecord>, StoreError> {
        if !self.by_id.contains_key(id) {
            return Err(StoreError::NotFound(format!("artifact '{id}'")));
        }
        let mut members = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if members.insert(cur.clone()) {
                let r = self.get(&cur).ok_or_else(|| StoreError::Provenance(format!("dangling parent '{cur}'")))?;
                stack.extend(r.parent_ids.iter().cloned());
            }
        }
        let mut pending: BTreeMap<&str, usize> = members
            .iter()
            .map(|m| (m.as_str(), self.get(m).expect("member").parent_ids.len()))
            .collect();
        let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, n)| **n == 0).map(|(m, _)| *m).collect();
        let mut out = Vec::with_capacity(members.len());
        while let Some(m) = ready.pop_first() {
            pending.remove(m);
            out.push(self.get(m).expect("member"));
            for (child, n) in pending.iter_mut() {
                let parents = &self.get(child).expect("member").parent_ids;
                if parents.iter().any(|p| p == m) {
                    *n -= 1;
                    if *n == 0 {
                        ready.insert(child);
                    }
                }
            }
        }
        if !pending.is_empty() {
            return Err(StoreError::Provenance("provenance graph has a cycle".into()));
        }
        Ok(out)
    }
}

pub fn created_at_text(r: &ArtifactRecord) -> String {
    r.created_at.to_rfc3339_opts(SecondsFormat::Millis, true)
}
