use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::StoreError;
use crate::dsl::{DataFormat, FolderSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Target,
    Id,
    Meta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Number,
    Integer,
    Boolean,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

/// Contents of the `<file>.roles.json` sidecar next to a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolesSidecar {
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<BTreeMap<String, Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<BTreeMap<String, Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemContext {
    pub supervised: bool,
    pub target_columns: Vec<String>,
    pub has_partitions: bool,
}

/// Supervision follows the declared roles; no inference from values.
pub fn detect_problem_context(ds: &Dataset) -> ProblemContext {
    let target_columns: Vec<String> = ds
        .columns
        .iter()
        .filter(|c| c.role == ColumnRole::Target)
        .map(|c| c.name.clone())
        .collect();
    ProblemContext {
        supervised: !target_columns.is_empty(),
        target_columns,
        has_partitions: ds.partitions.as_ref().is_some_and(|p| !p.is_empty()),
    }
}

impl Dataset {
    pub fn check(&self) -> Result<(), String> {
        if self.columns.iter().filter(|c| c.role == ColumnRole::Id).count() > 1 {
            return Err("more than one id column".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(&c.name) {
                return Err(format!("duplicate column '{}'", c.name));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.columns.len() {
                return Err(format!("row {i} has {} cells, expected {}", r.len(), self.columns.len()));
            }
        }
        if let Some(parts) = &self.partitions {
            let mut used = BTreeSet::new();
            for (name, idx) in parts {
                for &i in idx {
                    if i >= self.rows.len() {
                        return Err(format!("partition '{name}' names row {i} beyond the data"));
                    }
                    if !used.insert(i) {
                        return Err(format!("row {i} is in more than one partition"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, String> {
        let i = self.column_index(name).ok_or_else(|| format!("no column '{name}'"))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| row[i].as_f64().ok_or_else(|| format!("row {r} of '{name}' is not numeric")))
            .collect()
    }

    /// Feature rows, in column order.
    pub fn features(&self) -> Result<Vec<Vec<f64>>, String> {
        let cols: Vec<&str> = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .map(|c| c.name.as_str())
            .collect();
        let data = cols.iter().map(|c| self.numeric_column(c)).collect::<Result<Vec<_>, _>>()?;
        Ok((0..self.rows.len()).map(|r| data.iter().map(|c| c[r]).collect()).collect())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("datasets serialize")
    }

    pub fn from_value(v: &Value) -> Result<Dataset, String> {
        let ds: Dataset = serde_json::from_value(v.clone()).map_err(|e| format!("not a dataset: {e}"))?;
        ds.check()?;
        Ok(ds)
    }

    /// Parse CSV text (UTF-8, comma, header row) typed by the sidecar.
    pub fn from_csv(bytes: &[u8], roles: &RolesSidecar) -> Result<Dataset, String> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();
        let declared: Vec<&str> = roles.columns.iter().map(|c| c.name.as_str()).collect();
        if header != declared {
            return Err(format!("header {header:?} does not match declared columns {declared:?}"));
        }
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let row = rec
                .iter()
                .zip(&roles.columns)
                .map(|(cell, col)| parse_cell(cell, col.ty).map_err(|e| format!("row {r}, column '{}': {e}", col.name)))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let ds = Dataset {
            columns: roles.columns.clone(),
            rows,
            partitions: roles.partitions.clone(),
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }))
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn parse_cell(cell: &str, ty: ColumnType) -> Result<Value, String> {
    let t = cell.trim();
    match ty {
        ColumnType::Number => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|v| json!(v))
            .ok_or_else(|| format!("'{t}' is not a number")),
        ColumnType::Integer => t.parse::<i64>().map(|v| json!(v)).map_err(|_| format!("'{t}' is not an integer")),
        ColumnType::Boolean => match t {
            "true" | "1" => Ok(json!(true)),
            "false" | "0" => Ok(json!(false)),
            _ => Err(format!("'{t}' is not a boolean")),
        },
        ColumnType::Text => Ok(json!(cell)),
    }
}

/// One file matched by a folder source, plus its sidecar when it has one.
#[derive(Debug, Clone)]
pub struct FolderFile {
    /// Path relative to the folder, with `/` separators.
    pub name: String,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub sidecar: Option<Vec<u8>>,
    pub value: Value,
}

/// Read and parse every file matching the source's pattern, sorted by name.
pub fn load_folder(base_dir: &Path, src: &FolderSource) -> Result<Vec<FolderFile>, StoreError> {
    let folder = base_dir.join(&src.path);
    let pattern = folder.join(&src.pattern);
    let pattern = pattern.to_string_lossy();
    let mut paths: Vec<PathBuf> = glob::glob(&pattern)
        .map_err(|e| StoreError::Resolve(format!("bad pattern '{}': {e}", src.pattern)))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file() && !p.to_string_lossy().ends_with(".roles.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(StoreError::Resolve(format!(
            "no files match '{}' in {}",
            src.pattern,
            folder.display()
        )));
    }
    paths
        .into_iter()
        .map(|path| {
            let name = path
                .strip_prefix(&folder)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            let bytes = std::fs::read(&path).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
            let fail = |e: String| StoreError::Resolve(format!("{}: {e}", path.display()));
            let (value, sidecar) = match src.format {
                DataFormat::Json => (serde_json::from_slice(&bytes).map_err(|e| fail(e.to_string()))?, None),
                DataFormat::Csv => {
                    let side_path = PathBuf::from(format!("{}.roles.json", path.display()));
                    let side = std::fs::read(&side_path).map_err(|e| fail(format!("missing column roles sidecar: {e}")))?;
                    let roles: RolesSidecar = serde_json::from_slice(&side).map_err(|e| fail(format!("bad sidecar: {e}")))?;
                    let ds = Dataset::from_csv(&bytes, &roles).map_err(fail)?;
                    (ds.to_value(), Some(side))
                }
            };
            Ok(FolderFile {
                name,
                path,
                bytes,
                sidecar,
                value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(roles: &[ColumnRole]) -> Vec<Column> {
        roles
            .iter()
            .enumerate()
            .map(|(i, r)| Column {
                name: format!("c{i}"),
                role: *r,
                ty: ColumnType::Number,
            })
            .collect()
    }

    #[test]
    fn context_detection() {
        use ColumnRole::*;
        let mut ds = Dataset {
            columns: cols(&[Feature, Feature, Target]),
            rows: vec![],
            partitions: None,
        };
        let ctx = detect_problem_context(&ds);
        assert!(ctx.supervised);
        assert_eq!(ctx.target_columns, ["c2"]);
        ds.columns = cols(&[Feature, Feature]);
        assert!(!detect_problem_context(&ds).supervised);
        ds.partitions = Some(BTreeMap::from([("train".into(), vec![]), ("test".into(), vec![])]));
        assert!(detect_problem_context(&ds).has_partitions);
    }

    #[test]
    fn csv_parsing_and_invariants() {
        let roles = RolesSidecar {
            columns: vec![
                Column {
                    name: "id".into(),
                    role: ColumnRole::Id,
                    ty: ColumnType::Integer,
                },
                Column {
                    name: "x".into(),
                    role: ColumnRole::Feature,
                    ty: ColumnType::Number,
                },
            ],
            partitions: Some(BTreeMap::from([("a".into(), vec![0]), ("b".into(), vec![1])])),
        };
        let ds = Dataset::from_csv(b"id,x\n0,0.5\n1,0.25\n", &roles).unwrap();
        assert_eq!(ds.features().unwrap(), vec![vec![0.5], vec![0.25]]);
        assert_eq!(ds.to_csv(), "id,x\n0,0.5\n1,0.25\n");
        assert!(Dataset::from_csv(b"id,y\n0,1\n", &roles).is_err());
        let mut overlap = roles.clone();
        overlap.partitions = Some(BTreeMap::from([("a".into(), vec![0]), ("b".into(), vec![0])]));
        assert!(Dataset::from_csv(b"id,x\n0,0.5\n", &overlap).unwrap_err().contains("more than one partition"));
        let mut two_ids = roles;
        two_ids.columns[1].role = ColumnRole::Id;
        assert!(Dataset::from_csv(b"id,x\n0,0.5\n", &two_ids).is_err());
    }
}
