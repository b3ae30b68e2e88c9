//! Run artifacts: CSV tables with JSON sidecars, JSON documents, and the
//! manifest that ties them to a config and its seeds.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a run
//! repeated with the same config reproduces every file byte for byte. Only
//! the manifest's timestamps differ between repeats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Units shared by every table.
pub const UNITS: &str = "parameters and W2 in parameter units; sigma in units of k_B per step; \
free energy in loss units; temperature in loss units; dissipation budget D = duration * T * Sigma / 2 \
after rescaling the run to unit time, compared against W2^2 / 2";

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Float(f64),
    Int(i64),
    Uint(u64),
    Bool(bool),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Float(v) if v.is_nan() => "nan".into(),
            Field::Float(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Field::Float(v) => format!("{v:?}"),
            Field::Int(v) => v.to_string(),
            Field::Uint(v) => v.to_string(),
            Field::Bool(v) => v.to_string(),
            Field::Text(v) => v.clone(),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Uint(v as u64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Uint(v)
    }
}

impl From<i64> for Field {
    fn from(v: i64) -> Self {
        Field::Int(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Bool(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

/// An in-memory table written as `<name>.csv` plus `<name>.csv.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[(&str, &str)]) -> Self {
        Table {
            name: name.into(),
            columns: columns
                .iter()
                .map(|(n, d)| Column {
                    name: n.to_string(),
                    description: d.to_string(),
                })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Field::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Index of a column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    file: String,
    columns: &'a [Column],
    rows: usize,
    config_sha256: &'a str,
    units: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub purpose: String,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    version: &'a str,
    scenario: &'a str,
    config: &'a ExperimentConfig,
    config_sha256: &'a str,
    started_unix_s: u64,
    finished_unix_s: u64,
    master_seed: u64,
    seeds: &'a [SeedRecord],
    files: &'a BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writer for one run directory. Every file it writes is checksummed into
/// the manifest.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    config_sha256: String,
    started: u64,
    files: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn create(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            config_sha256: sha256_hex(config.to_toml().as_bytes()),
            started: unix_now(),
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_table(&mut self, table: &Table) -> Result<()> {
        let file = table.file_name();
        self.write_file(&file, table.to_csv().as_bytes())?;
        let sidecar = Sidecar {
            schema_version: SCHEMA_VERSION,
            file: file.clone(),
            columns: &table.columns,
            rows: table.rows.len(),
            config_sha256: &self.config_sha256,
            units: UNITS,
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
        self.write_file(&format!("{file}.json"), json.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(value).expect("document serializes") + "\n";
        self.write_file(name, json.as_bytes())
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, config: &ExperimentConfig, seeds: &[SeedRecord]) -> Result<PathBuf> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION"),
            scenario: config.scenario.name(),
            config,
            config_sha256: &self.config_sha256,
            started_unix_s: self.started,
            finished_unix_s: unix_now(),
            master_seed: config.master_seed,
            seeds,
            files: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, json).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}
