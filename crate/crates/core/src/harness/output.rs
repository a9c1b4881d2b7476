//! Result tables, the run manifest and atomic file output.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use tempfile::NamedTempFile;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("row has {got} cells, table '{table}' has {expected} columns")]
    RowWidth { table: String, expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One cell of a result table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    UInt(u64),
    Bool(bool),
    Text(String),
}

impl Cell {
    /// Shortest decimal form that parses back to the same value.
    fn csv_text(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // JSON has no NaN or infinity; those become strings
            Cell::Float(v) if !v.is_finite() => Value::String(format_float(*v)),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Int(v) => Value::from(*v),
            Cell::UInt(v) => Value::from(*v),
            Cell::Bool(v) => Value::Bool(*v),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v == 0.0 || (1e-5..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        // shortest round-trip digits without a 300-digit expansion
        format!("{v:e}")
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::UInt(v as u64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::UInt(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::UInt(v as u64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A named result family with fixed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "table '{}' row width", self.name);
        self.rows.push(row);
    }

    fn check(&self) -> Result<(), OutputError> {
        for r in &self.rows {
            if r.len() != self.columns.len() {
                return Err(OutputError::RowWidth {
                    table: self.name.clone(),
                    expected: self.columns.len(),
                    got: r.len(),
                });
            }
        }
        Ok(())
    }

    /// Line-delimited JSON; every record starts with the manifest hash.
    pub fn to_jsonl(&self, manifest_hash: &str) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push('{');
            out.push_str(&format!("\"manifest\":{}", Value::String(manifest_hash.into())));
            for (c, v) in self.columns.iter().zip(row) {
                out.push(',');
                out.push_str(&Value::String(c.clone()).to_string());
                out.push(':');
                out.push_str(&v.json().to_string());
            }
            out.push_str("}\n");
        }
        out
    }

    /// Comma-separated table with a leading `manifest` column.
    pub fn to_csv(&self, manifest_hash: &str) -> Result<Vec<u8>, OutputError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["manifest".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![manifest_hash.to_string()];
            rec.extend(row.iter().map(Cell::csv_text));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| OutputError::Io {
            path: PathBuf::from("<csv buffer>"),
            source: e.into_error(),
        })
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory;
/// a failed write leaves no partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let io_err = |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Writes `<name>.jsonl` and `<name>.csv` for each table.
pub fn emit_results(dir: &Path, tables: &[Table], manifest_hash: &str) -> Result<Vec<PathBuf>, OutputError> {
    let mut written = Vec::new();
    for t in tables {
        t.check()?;
        let jsonl = dir.join(format!("{}.jsonl", t.name));
        write_atomic(&jsonl, t.to_jsonl(manifest_hash).as_bytes())?;
        written.push(jsonl);
        let csv_path = dir.join(format!("{}.csv", t.name));
        write_atomic(&csv_path, &t.to_csv(manifest_hash)?)?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Deterministic part of the manifest; its hash is what results reference.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestContent {
    pub code_version: String,
    pub config: Value,
    /// Per-module parameters (inner radius, cutoffs, quadrature depths).
    pub parameters: Value,
}

impl ManifestContent {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub jumps: u64,
    pub phantoms: u64,
    pub cap_exceedances: u64,
    pub truncated_runs: u64,
}

impl Counters {
    pub fn add(&mut self, other: &Counters) {
        self.jumps += other.jumps;
        self.phantoms += other.phantoms;
        self.cap_exceedances += other.cap_exceedances;
        self.truncated_runs += other.truncated_runs;
    }
}

/// Run-specific facts that may differ between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub status: RunStatus,
    pub workers: Option<usize>,
    pub wall_clock_seconds: f64,
    pub counters: Counters,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub content_hash: String,
    pub content: ManifestContent,
    pub run: RunInfo,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, OutputError> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("empty", &["a", "b"]);
        assert_eq!(String::from_utf8(t.to_csv("h").unwrap()).unwrap(), "manifest,a,b\n");
        assert_eq!(t.to_jsonl("h"), "");
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5, 0.0, f64::MIN_POSITIVE, 5e-324] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
        assert_eq!(format_float(2.0), "2");
    }

    #[test]
    fn jsonl_rows_carry_the_hash_and_round_trip() {
        let mut t = Table::new("t", &["x", "ok", "name"]);
        t.push(vec![0.1.into(), true.into(), "a".into()]);
        t.push(vec![f64::NAN.into(), false.into(), "b".into()]);
        let text = t.to_jsonl("abc");
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["manifest"], "abc");
        assert_eq!(first["x"].as_f64().unwrap().to_bits(), 0.1f64.to_bits());
        let second: Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["x"], "NaN");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_hash_ignores_run_info() {
        let content = ManifestContent {
            code_version: "v".into(),
            config: serde_json::json!({"a": 1}),
            parameters: serde_json::json!({}),
        };
        let h = content.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, content.clone().hash());
    }
}
