use std::sync::Arc;

use serde_json::{json, Value};

use super::learn::best_index;
use super::{candidate_set, maximizing, observations, observations_of, points_of, sense_values, Call, FnPlugin, Out, BUILTIN_VERSION};
use crate::datastore::{detect_problem_context, ColumnRole, ColumnType, Dataset};
use crate::dsl::ModuleKind;
use crate::ml::{binarize, standardize, ScoringModel};
use crate::plugin::{DataKind, MethodSpec, ParamSpec, ParamType, Plugin, PluginDescriptor, PortSpec};

pub(super) fn all() -> Vec<Arc<dyn Plugin>> {
    vec![
        binarizer(),
        standardizer(),
        accumulator(),
        target_check(),
        labeled_pool(),
        dataset_loader(),
        simplex_grid(),
        grid_space(),
        feature_space(),
    ]
}

fn vector_of(c: &Call, k: &str) -> Result<Vec<f64>, String> {
    serde_json::from_value(c.need(k)?.clone()).map_err(|e| format!("input '{k}': {e}"))
}

fn table_of(c: &Call, k: &str) -> Result<Dataset, String> {
    Dataset::from_value(c.need(k)?)
}

/// Values at or above the threshold become 1.
pub fn binarizer() -> Arc<dyn Plugin> {
    let threshold = || ParamSpec::optional("threshold", ParamType::Number, Some(json!(0.5)));
    FnPlugin::new(
        PluginDescriptor::new("binarizer", ModuleKind::DataProcessing, BUILTIN_VERSION)
            .method(
                MethodSpec::new("transform")
                    .param(threshold())
                    .input(PortSpec::new("column", DataKind::Vector))
                    .output(PortSpec::new("binary", DataKind::Vector)),
            )
            .method(
                MethodSpec::new("transform-table")
                    .param(threshold())
                    .param(ParamSpec::optional("column", ParamType::Text, None))
                    .input(PortSpec::new("table", DataKind::Table))
                    .output(PortSpec::new("table", DataKind::Table)),
            ),
        vec![("transform", binarize_vector), ("transform-table", binarize_table)],
    )
}

fn binarize_vector(c: &Call) -> Result<Out, String> {
    let bits = binarize(&vector_of(c, "column")?, c.num("threshold")?).map_err(|e| e.to_string())?;
    Ok(Out::new().put("binary", json!(bits)))
}

/// The named column, else the first target, else the first numeric column.
fn pick_column(ds: &Dataset, named: Option<&str>) -> Result<usize, String> {
    if let Some(n) = named {
        return ds.column_index(n).ok_or_else(|| format!("no column '{n}'"));
    }
    let numeric = |t: ColumnType| matches!(t, ColumnType::Number | ColumnType::Integer);
    ds.columns
        .iter()
        .position(|c| c.role == ColumnRole::Target && numeric(c.ty))
        .or_else(|| ds.columns.iter().position(|c| numeric(c.ty)))
        .ok_or_else(|| "table has no numeric column".to_string())
}

fn binarize_table(c: &Call) -> Result<Out, String> {
    let mut ds = table_of(c, "table")?;
    let i = pick_column(&ds, c.text("column"))?;
    let name = ds.columns[i].name.clone();
    let bits = binarize(&ds.numeric_column(&name)?, c.num("threshold")?).map_err(|e| e.to_string())?;
    for (row, b) in ds.rows.iter_mut().zip(bits) {
        row[i] = json!(b);
    }
    ds.columns[i].ty = ColumnType::Integer;
    Ok(Out::new().put("table", ds.to_value()))
}

/// Zero mean and unit population standard deviation per column.
pub fn standardizer() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("standardizer", ModuleKind::DataProcessing, BUILTIN_VERSION)
            .method(
                MethodSpec::new("transform")
                    .input(PortSpec::new("column", DataKind::Vector))
                    .output(PortSpec::new("scaled", DataKind::Vector))
                    .output(PortSpec::new("scaling", DataKind::Record)),
            )
            .method(
                MethodSpec::new("transform-table")
                    .param(ParamSpec::optional("columns", ParamType::Text, None))
                    .input(PortSpec::new("table", DataKind::Table))
                    .output(PortSpec::new("table", DataKind::Table))
                    .output(PortSpec::new("scaling", DataKind::Record)),
            ),
        vec![("transform", standardize_vector), ("transform-table", standardize_table)],
    )
}

fn standardize_vector(c: &Call) -> Result<Out, String> {
    let (scaled, mean, std) = standardize(&vector_of(c, "column")?).map_err(|e| e.to_string())?;
    Ok(Out::new()
        .put("scaled", json!(scaled))
        .put("scaling", json!({"mean": mean, "std": std})))
}

/// Scales the comma-separated `columns`, or every feature column.
fn standardize_table(c: &Call) -> Result<Out, String> {
    let mut ds = table_of(c, "table")?;
    let names: Vec<String> = match c.text("columns") {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => ds
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .map(|c| c.name.clone())
            .collect(),
    };
    let mut scaling = serde_json::Map::new();
    for name in names {
        let i = ds.column_index(&name).ok_or_else(|| format!("no column '{name}'"))?;
        let (scaled, mean, std) = standardize(&ds.numeric_column(&name)?).map_err(|e| format!("column '{name}': {e}"))?;
        for (row, v) in ds.rows.iter_mut().zip(scaled) {
            row[i] = json!(v);
        }
        ds.columns[i].ty = ColumnType::Number;
        scaling.insert(name, json!({"mean": mean, "std": std}));
    }
    Ok(Out::new().put("table", ds.to_value()).put("scaling", Value::Object(scaling)))
}

/// Appends a batch of observations to the running history.
fn accumulator() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("accumulator", ModuleKind::DataProcessing, BUILTIN_VERSION).method(
            MethodSpec::new("append")
                .input(PortSpec::new("batch", DataKind::Record))
                .input(PortSpec::optional("history", DataKind::Record))
                .output(PortSpec::new("observations", DataKind::Record)),
        ),
        vec![("append", accumulate)],
    )
}

fn accumulate(c: &Call) -> Result<Out, String> {
    let (mut pts, mut vals) = match c.input("history") {
        Some(h) => observations_of(h).map_err(|e| format!("history: {e}"))?,
        None => (Vec::new(), Vec::new()),
    };
    let (bp, bv) = observations_of(c.need("batch")?).map_err(|e| format!("batch: {e}"))?;
    pts.extend(bp);
    vals.extend(bv);
    let n = vals.len() as f64;
    Ok(Out::new().put("observations", observations(&pts, &vals)).diag("count", n))
}

fn target_check() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("target-check", ModuleKind::DataProcessing, BUILTIN_VERSION).method(
            MethodSpec::new("check")
                .param(ParamSpec::optional("target", ParamType::Number, Some(json!(0.0))))
                .param(ParamSpec::optional("sense", sense_values(), Some(json!("minimize"))))
                .input(PortSpec::new("observations", DataKind::Record))
                .output(PortSpec::new("unmet", DataKind::Boolean)),
        ),
        vec![("check", check_target)],
    )
}

/// `unmet` stays true until some observation reaches the target.
fn check_target(c: &Call) -> Result<Out, String> {
    let (pts, vals) = observations_of(c.need("observations")?)?;
    let target = c.num("target")?;
    let max = maximizing(c);
    let met = best_index(&pts, &vals, max).is_some_and(|i| if max { vals[i] >= target } else { vals[i] <= target });
    Ok(Out::new().put("unmet", json!(!met)))
}

fn labeled_pool() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("labeled-pool", ModuleKind::DataProcessing, BUILTIN_VERSION).method(
            MethodSpec::new("append")
                .input(PortSpec::new("query", DataKind::CandidateSet))
                .input(PortSpec::new("label", DataKind::Label))
                .input(PortSpec::optional("history", DataKind::Record))
                .output(PortSpec::new("labeled", DataKind::Record)),
        ),
        vec![("append", pool_append)],
    )
}

/// Labeled pool as `(points, labels)`.
pub(super) fn pool_of(v: &Value) -> Result<(Vec<Vec<f64>>, Vec<u8>), String> {
    let pts = points_of(v)?;
    let labels: Vec<u8> = serde_json::from_value(v.get("labels").cloned().unwrap_or(Value::Null))
        .map_err(|e| format!("bad labels: {e}"))?;
    if pts.len() != labels.len() || labels.iter().any(|l| *l > 1) {
        return Err("labels must be 0 or 1, one per point".into());
    }
    Ok((pts, labels))
}

/// Every queried point takes the one label.
fn pool_append(c: &Call) -> Result<Out, String> {
    let (mut pts, mut labels) = match c.input("history") {
        Some(h) => pool_of(h).map_err(|e| format!("history: {e}"))?,
        None => (Vec::new(), Vec::new()),
    };
    let label = c.need("label")?.as_u64().filter(|l| *l <= 1).ok_or("label must be 0 or 1")? as u8;
    let query = c.points("query")?;
    if query.is_empty() {
        return Err("query holds no point".into());
    }
    for q in query {
        pts.push(q);
        labels.push(label);
    }
    let n = labels.len() as f64;
    Ok(Out::new()
        .put("labeled", json!({"points": pts, "labels": labels}))
        .diag("count", n))
}

fn dataset_loader() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("dataset-loader", ModuleKind::Initialiser, BUILTIN_VERSION).method(
            MethodSpec::new("load")
                .input(PortSpec::new("table", DataKind::Table))
                .output(PortSpec::new("candidates", DataKind::CandidateSet))
                .output(PortSpec::new("context", DataKind::Record)),
        ),
        vec![("load", load_dataset)],
    )
}

/// Feature rows become the candidate set.
fn load_dataset(c: &Call) -> Result<Out, String> {
    let ds = table_of(c, "table")?;
    let pts = ds.features()?;
    let ctx = serde_json::to_value(detect_problem_context(&ds)).expect("context serializes");
    Ok(Out::new()
        .put("candidates", candidate_set(&pts))
        .put("context", ctx)
        .diag("rows", pts.len() as f64))
}

fn simplex_grid() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("simplex-grid", ModuleKind::Initialiser, BUILTIN_VERSION).method(
            MethodSpec::new("build")
                .param(ParamSpec::optional("steps", ParamType::Integer, Some(json!(20))))
                .output(PortSpec::new("candidates", DataKind::CandidateSet)),
        ),
        vec![("build", build_simplex)],
    )
}

/// `(i/steps, j/steps)` with `i + j <= steps`.
pub fn simplex_points(steps: usize) -> Vec<Vec<f64>> {
    let s = steps as f64;
    (0..=steps)
        .flat_map(|i| (0..=steps - i).map(move |j| vec![i as f64 / s, j as f64 / s]))
        .collect()
}

fn build_simplex(c: &Call) -> Result<Out, String> {
    let steps = c.count("steps")?;
    if steps == 0 {
        return Err("steps must be at least 1".into());
    }
    Ok(Out::new().put("candidates", candidate_set(&simplex_points(steps))))
}

fn grid_space() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("grid-space", ModuleKind::Initialiser, BUILTIN_VERSION).method(
            MethodSpec::new("build")
                .param(ParamSpec::optional("lo", ParamType::Number, Some(json!(-2.0))))
                .param(ParamSpec::optional("hi", ParamType::Number, Some(json!(2.0))))
                .param(ParamSpec::optional("step", ParamType::Number, Some(json!(0.1))))
                .param(ParamSpec::optional("dims", ParamType::Integer, Some(json!(2))))
                .output(PortSpec::new("candidates", DataKind::CandidateSet)),
        ),
        vec![("build", build_grid)],
    )
}

/// Axis values `lo + k step` up to `hi`, rounded to 12 decimals so that
/// grid points compare equal across runs.
pub fn grid_axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0 && hi >= lo) {
        return Err("need step > 0 and hi >= lo".into());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect())
}

fn build_grid(c: &Call) -> Result<Out, String> {
    let axis = grid_axis(c.num("lo")?, c.num("hi")?, c.num("step")?)?;
    let dims = c.count("dims")?;
    if dims == 0 || axis.len().checked_pow(dims as u32).is_none_or(|n| n > 1_000_000) {
        return Err("grid must have 1 to 1e6 points".into());
    }
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dims {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    Ok(Out::new().put("candidates", candidate_set(&pts)))
}

fn feature_space() -> Arc<dyn Plugin> {
    FnPlugin::new(
        PluginDescriptor::new("feature-space", ModuleKind::Initialiser, BUILTIN_VERSION).method(
            MethodSpec::new("define")
                .param(ParamSpec::optional("dim", ParamType::Integer, Some(json!(4))))
                .param(ParamSpec::optional("prior_variance", ParamType::Number, Some(json!(1.0))))
                .output(PortSpec::new("prior", DataKind::ModelParams)),
        ),
        vec![("define", init_features)],
    )
}

/// The flat scoring model every campaign starts from.
fn init_features(c: &Call) -> Result<Out, String> {
    let dim = c.count("dim")?;
    let pv = c.num("prior_variance")?;
    if dim == 0 || !(pv > 0.0) {
        return Err("need dim >= 1 and prior_variance > 0".into());
    }
    Ok(Out::new().put("prior", ScoringModel::zero(dim, pv).to_json()))
}
