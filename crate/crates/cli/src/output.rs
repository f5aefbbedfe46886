//! Atomic output writing with provenance metadata.
//!
//! Every artifact records how it was produced: JSON reports embed a
//! `meta` object next to the `report` payload; CSV and table outputs
//! carry `#`-prefixed header lines; JSONL corpora get a sidecar
//! `<name>.meta.json` so the data file itself stays one-record-per-line.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance stamp attached to every output.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub config: serde_json::Value,
}

impl Meta {
    pub fn new(command: &str, seed: Option<u64>, inputs: &[&Path], config: serde_json::Value) -> Self {
        Meta {
            tool: "deidkit",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config,
        }
    }
}

/// Write bytes to `path` atomically: a temp file in the same directory
/// is renamed over the target, so a crash never leaves a partial file.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{}.tmp-{}", file_name, std::process::id()));
    std::fs::write(&tmp, content).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot rename {} into place", tmp.display()))?;
    Ok(())
}

/// Write a payload to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(path) => write_atomic(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// A JSON report wrapped with its metadata.
pub fn json_report<T: Serialize>(meta: &Meta, report: &T) -> String {
    let value = serde_json::json!({ "meta": meta, "report": report });
    let mut out = serde_json::to_string_pretty(&value).expect("report serializes");
    out.push('\n');
    out
}

/// Prefix tabular text (CSV or aligned table) with `#` metadata lines.
pub fn with_header(meta: &Meta, body: &str) -> String {
    let config = serde_json::to_string(&meta.config).expect("config serializes");
    format!(
        "# tool={} version={} command={}{}\n# config={}\n{}",
        meta.tool,
        meta.version,
        meta.command,
        meta.seed.map(|s| format!(" seed={s}")).unwrap_or_default(),
        config,
        body
    )
}

/// The sidecar metadata path for a JSONL artifact.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".meta.json");
    out.with_file_name(name)
}

/// Write a JSONL artifact plus its metadata sidecar.
pub fn write_jsonl_with_meta(out: &Path, body: &str, meta: &Meta) -> Result<()> {
    write_atomic(out, body)?;
    let mut meta_json = serde_json::to_string_pretty(meta).expect("meta serializes");
    meta_json.push('\n');
    write_atomic(&sidecar_path(out), &meta_json)
}

/// Flatten a JSON value into `metric,value` CSV rows: numeric and
/// boolean leaves become rows keyed by their dotted path. Used for
/// report shapes that have no bespoke CSV layout.
pub fn flatten_to_csv<T: Serialize>(value: &T) -> String {
    fn walk(prefix: &str, value: &serde_json::Value, rows: &mut Vec<(String, String)>) {
        match value {
            serde_json::Value::Number(n) => rows.push((prefix.to_string(), n.to_string())),
            serde_json::Value::Bool(b) => rows.push((prefix.to_string(), b.to_string())),
            serde_json::Value::Object(map) => {
                for (key, child) in map {
                    let next = if prefix.is_empty() {
                        key.clone()
                    } else {
                        format!("{prefix}.{key}")
                    };
                    walk(&next, child, rows);
                }
            }
            serde_json::Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), child, rows);
                }
            }
            _ => {}
        }
    }
    let json = serde_json::to_value(value).expect("value serializes");
    let mut rows = Vec::new();
    walk("", &json, &mut rows);
    let mut out = String::from("metric,value\n");
    for (key, value) in rows {
        out.push_str(&format!("{key},{value}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/report.json");
        write_atomic(&path, "{}\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "{}\n");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.contains("tmp"))
            .collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }

    #[test]
    fn sidecar_name_appends_meta_suffix() {
        assert_eq!(
            sidecar_path(Path::new("out/pool.jsonl")),
            Path::new("out/pool.jsonl.meta.json")
        );
    }

    #[test]
    fn flattened_csv_uses_dotted_paths() {
        let value = serde_json::json!({"a": {"b": 1.5, "c": [2, 3]}, "skip": "text"});
        let csv = flatten_to_csv(&value);
        assert!(csv.contains("a.b,1.5\n"));
        assert!(csv.contains("a.c.0,2\n"));
        assert!(!csv.contains("skip"));
    }
}
