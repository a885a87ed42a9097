//! Output files: CSV tables, sorted pretty JSON, run manifests and law
//! artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg_ode::{TimeGrid, Trajectory};
use crate::model::{matrix_to_json, parse_matrix, parse_vector, vector_to_json};
use crate::riccati::FeedbackLaw;

pub const MANIFEST: &str = "manifest.json";
pub const LAW_FILE: &str = "law.json";
pub const CONFIG_COPY: &str = "config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table assembled in memory and written in one go.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",");
        text.push('\n');
        Self { text }
    }

    pub fn numeric_row(&mut self, leading: &[String], values: impl IntoIterator<Item = f64>) {
        let mut first = true;
        for field in leading {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(field);
            first = false;
        }
        for v in values {
            if !first {
                self.text.push(',');
            }
            let _ = write!(self.text, "{v:.16e}");
            first = false;
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Creates the output directory and records what goes into it.
pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
    artifacts: Vec<String>,
    fields: serde_json::Map<String, Value>,
}

impl RunDir {
    pub fn create(dir: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            started: Instant::now(),
            artifacts: Vec::new(),
            fields: serde_json::Map::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: Csv) -> Result<()> {
        self.write(name, csv.into_string().as_bytes())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.write(name, pretty_json(value).as_bytes())
    }

    /// Stores the exact configuration bytes and records their hash.
    pub fn store_config(&mut self, bytes: &[u8]) -> Result<()> {
        self.write(CONFIG_COPY, bytes)?;
        self.set("config_hash", json!(sha256_hex(bytes)));
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.fields.insert(key.to_string(), value);
    }

    pub fn set_grid(&mut self, grid: &TimeGrid) {
        self.set("grid", json!({ "T": grid.horizon(), "steps": grid.steps(), "dt": grid.dt() }));
    }

    /// Writes `manifest.json`; the only field that differs between
    /// otherwise identical runs is `wall_time_seconds`.
    pub fn finish(mut self) -> Result<()> {
        let mut manifest = std::mem::take(&mut self.fields);
        manifest.insert("command".into(), json!(self.command));
        manifest.insert("artifacts".into(), json!(self.artifacts));
        manifest.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        manifest.insert("wall_time_seconds".into(), json!(self.started.elapsed().as_secs_f64()));
        fs::write(self.dir.join(MANIFEST), pretty_json(&Value::Object(manifest)))?;
        Ok(())
    }
}

pub fn pretty_json(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n"
}

fn samples<T>(traj: &Trajectory<T>, f: fn(&T) -> Value) -> Value {
    json!({ "samples": traj.values().iter().map(f).collect::<Vec<_>>() })
}

/// The law as sampled trajectories, together with the mean state it was
/// built around.
pub fn law_to_json(law: &FeedbackLaw, mean_state: &Trajectory<DVector<f64>>) -> Value {
    let grid = law.grid();
    json!({
        "T": grid.horizon(),
        "steps": grid.steps(),
        "margin": law.margin,
        "P": samples(&law.p, matrix_to_json),
        "phi": samples(&law.phi, vector_to_json),
        "theta1": samples(&law.theta1, matrix_to_json),
        "theta2": samples(&law.theta2, vector_to_json),
        "xhat": samples(mean_state, vector_to_json),
    })
}

fn read_samples<T>(value: &Value, key: &str, grid: TimeGrid, parse: fn(&Value, &str) -> Result<T>) -> Result<Trajectory<T>> {
    let items = value
        .get(key)
        .and_then(|v| v.get("samples"))
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema(format!("{key}.samples")))?;
    let parsed = items.iter().map(|v| parse(v, key)).collect::<Result<Vec<_>>>()?;
    Trajectory::new(grid, parsed).map_err(|_| Error::Schema(format!("{key}.samples (expected {} entries)", grid.len())))
}

pub struct StoredLaw {
    pub law: FeedbackLaw,
    pub mean_state: Trajectory<DVector<f64>>,
    pub hash: String,
}

/// Reads `law.json` from a `solve` output directory.
pub fn read_law(dir: &Path) -> Result<StoredLaw> {
    let bytes = fs::read(dir.join(LAW_FILE))?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse(format!("{}: line {}, column {}: {e}", LAW_FILE, e.line(), e.column())))?;
    let horizon = value.get("T").and_then(Value::as_f64).ok_or_else(|| Error::Schema("T".into()))?;
    let steps = value
        .get("steps")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema("steps".into()))? as usize;
    let grid = TimeGrid::new(horizon, steps)?;
    let margin = value
        .get("margin")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Schema("margin".into()))?;
    let law = FeedbackLaw {
        p: read_samples::<DMatrix<f64>>(&value, "P", grid, parse_matrix)?,
        phi: read_samples::<DVector<f64>>(&value, "phi", grid, parse_vector)?,
        theta1: read_samples::<DMatrix<f64>>(&value, "theta1", grid, parse_matrix)?,
        theta2: read_samples::<DVector<f64>>(&value, "theta2", grid, parse_vector)?,
        margin,
    };
    let mean_state = read_samples::<DVector<f64>>(&value, "xhat", grid, parse_vector)?;
    Ok(StoredLaw {
        law,
        mean_state,
        hash: sha256_hex(&bytes),
    })
}
