use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::{FileFormat, Resolved};

/// One rectangular result table: a header row plus numeric rows. Each table
/// becomes one output file; `suffix` distinguishes files when an experiment
/// produces more than one.
#[derive(Debug, Clone)]
pub struct Table {
    pub suffix: &'static str,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(suffix: &'static str, headers: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == headers.len()));
        Table { suffix, headers, rows }
    }
}

/// Everything an experiment hands back for serialization: the data tables
/// and experiment-specific metadata (fit results, flags, probe ratios).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub extra: Map<String, Value>,
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn write_csv(path: &Path, table: &Table) -> Result<(), String> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    writer
        .write_record(&table.headers)
        .and_then(|()| {
            table.rows.iter().try_for_each(|row| {
                writer.write_record(row.iter().map(|v| v.to_string()))
            })
        })
        .and_then(|()| writer.flush().map_err(Into::into))
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_jsonl(path: &Path, table: &Table) -> Result<(), String> {
    let mut lines = String::new();
    for row in &table.rows {
        let mut object = Map::new();
        for (header, v) in table.headers.iter().zip(row) {
            object.insert(header.clone(), number(*v));
        }
        lines.push_str(&Value::Object(object).to_string());
        lines.push('\n');
    }
    std::fs::write(path, lines).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Resolved output file paths for a run: one per table, in table order.
pub fn table_paths(resolved: &Resolved) -> Vec<PathBuf> {
    table_suffixes(resolved)
        .iter()
        .map(|suffix| stem_with(&resolved.out_stem, suffix, resolved.format.extension()))
        .collect()
}

fn table_suffixes(resolved: &Resolved) -> Vec<&'static str> {
    match resolved.experiment {
        crate::config::Experiment::SmoothingStudy => vec!["-m-lag", "-tol"],
        _ => vec![""],
    }
}

pub fn meta_path(resolved: &Resolved) -> PathBuf {
    stem_with(&resolved.out_stem, "", "meta.json")
}

fn stem_with(stem: &Path, suffix: &str, extension: &str) -> PathBuf {
    let mut name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.push_str(suffix);
    name.push('.');
    name.push_str(extension);
    stem.with_file_name(name)
}

/// Write every table plus the metadata sidecar; returns the written paths.
pub fn write_all(
    resolved: &Resolved,
    output: &RunOutput,
    wall_time_secs: f64,
    threads: Option<usize>,
) -> Result<Vec<PathBuf>, String> {
    if let Some(parent) = resolved.out_stem.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        }
    }

    let mut written = Vec::new();
    for (table, path) in output.tables.iter().zip(table_paths(resolved)) {
        match resolved.format {
            FileFormat::Csv => write_csv(&path, table)?,
            FileFormat::Jsonl => write_jsonl(&path, table)?,
        }
        written.push(path);
    }

    let config_echo = serde_json::to_value(&resolved.config)
        .map_err(|e| format!("cannot serialize config echo: {e}"))?;
    let mut meta = Map::new();
    meta.insert("experiment".into(), json!(resolved.experiment.to_string()));
    meta.insert("seed".into(), json!(resolved.plan.seed));
    meta.insert("format".into(), json!(resolved.format.extension()));
    meta.insert("library-version".into(), json!(env!("CARGO_PKG_VERSION")));
    meta.insert("wall-time-secs".into(), number(wall_time_secs));
    meta.insert("threads".into(), threads.map_or(Value::Null, |t| json!(t)));
    meta.insert(
        "outputs".into(),
        Value::Array(written.iter().map(|p| json!(p.display().to_string())).collect()),
    );
    meta.insert("config".into(), config_echo);
    for (key, value) in &output.extra {
        meta.insert(key.clone(), value.clone());
    }

    let meta_file = meta_path(resolved);
    std::fs::write(&meta_file, serde_json::to_string_pretty(&Value::Object(meta)).expect("meta is valid JSON"))
        .map_err(|e| format!("cannot write {}: {e}", meta_file.display()))?;
    written.push(meta_file);
    Ok(written)
}
