//! JSON configuration files.
//!
//! Keys: `n, m, T, steps, A, B, C, D, F, Ftilde, Q, R, G, Gamma, GammaBar,
//! eta, etaBar, xi0`. Matrices are row-major nested arrays; time-varying
//! entries are `{"samples": [...]}` with one value per grid node.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use super::params::{Coef, ModelParams};
use crate::error::{Error, Result};
use crate::linalg_ode::TimeGrid;

pub fn load_config(path: impl AsRef<Path>) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn save_config(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&config_to_json(params)).expect("config serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ModelParams> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("top level must be a JSON object".into()))?;

    let state_dim = get_count(obj, "n")?;
    let control_dim = get_count(obj, "m")?;
    let steps = get_count(obj, "steps")?;
    let horizon = get_field(obj, "T")?
        .as_f64()
        .ok_or_else(|| Error::Schema("T".into()))?;
    let grid = TimeGrid::new(horizon, steps)?;
    let nodes = grid.len();

    let mat = |key: &str| -> Result<Coef<DMatrix<f64>>> { parse_coef(get_field(obj, key)?, key, nodes, parse_matrix) };
    let vec = |key: &str| -> Result<Coef<DVector<f64>>> { parse_coef(get_field(obj, key)?, key, nodes, parse_vector) };
    let const_mat = |key: &str| parse_matrix(get_field(obj, key)?, key);
    let const_vec = |key: &str| parse_vector(get_field(obj, key)?, key);

    Ok(ModelParams {
        state_dim,
        control_dim,
        grid,
        state_drift: mat("A")?,
        control_drift: mat("B")?,
        state_diffusion: mat("C")?,
        control_diffusion: mat("D")?,
        mean_drift: mat("F")?,
        mean_diffusion: mat("Ftilde")?,
        state_weight: mat("Q")?,
        control_weight: mat("R")?,
        tracking_gain: mat("Gamma")?,
        tracking_offset: vec("eta")?,
        terminal_weight: const_mat("G")?,
        terminal_tracking_gain: const_mat("GammaBar")?,
        terminal_offset: const_vec("etaBar")?,
        initial_state: const_vec("xi0")?,
    })
}

fn get_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Schema(key.into()))
}

fn get_count(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    get_field(obj, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Schema(key.into()))
}

fn parse_coef<T>(
    value: &Value,
    key: &str,
    nodes: usize,
    parse: fn(&Value, &str) -> Result<T>,
) -> Result<Coef<T>> {
    match value.get("samples") {
        Some(samples) => {
            let items = samples
                .as_array()
                .ok_or_else(|| Error::Schema(format!("{key}.samples")))?;
            if items.len() != nodes {
                return Err(Error::Schema(format!(
                    "{key}.samples (expected {nodes} entries, got {})",
                    items.len()
                )));
            }
            let parsed = items.iter().map(|v| parse(v, key)).collect::<Result<Vec<_>>>()?;
            Ok(Coef::Sampled(parsed))
        }
        None => Ok(Coef::Constant(parse(value, key)?)),
    }
}

fn parse_number(value: &Value, key: &str) -> Result<f64> {
    value.as_f64().ok_or_else(|| Error::Schema(format!("{key} (expected a number)")))
}

pub fn parse_matrix(value: &Value, key: &str) -> Result<DMatrix<f64>> {
    let rows = value
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{key} (expected nested arrays)")))?;
    let mut data = Vec::new();
    let mut cols = None;
    for row in rows {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Schema(format!("{key} (expected nested arrays)")))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Error::Schema(format!("{key} (ragged rows)")));
        }
        for v in row {
            data.push(parse_number(v, key)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols.unwrap_or(0), &data))
}

pub fn parse_vector(value: &Value, key: &str) -> Result<DVector<f64>> {
    let items = value
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{key} (expected an array)")))?;
    let data = items.iter().map(|v| parse_number(v, key)).collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(data))
}

pub fn matrix_to_json(mat: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..mat.nrows())
            .map(|i| Value::Array((0..mat.ncols()).map(|j| json!(mat[(i, j)])).collect()))
            .collect(),
    )
}

pub fn vector_to_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn coef_to_json<T>(coef: &Coef<T>, f: fn(&T) -> Value) -> Value {
    match coef {
        Coef::Constant(v) => f(v),
        Coef::Sampled(vs) => json!({ "samples": vs.iter().map(f).collect::<Vec<_>>() }),
    }
}

pub fn config_to_json(p: &ModelParams) -> Value {
    json!({
        "n": p.state_dim,
        "m": p.control_dim,
        "T": p.grid.horizon(),
        "steps": p.grid.steps(),
        "A": coef_to_json(&p.state_drift, matrix_to_json),
        "B": coef_to_json(&p.control_drift, matrix_to_json),
        "C": coef_to_json(&p.state_diffusion, matrix_to_json),
        "D": coef_to_json(&p.control_diffusion, matrix_to_json),
        "F": coef_to_json(&p.mean_drift, matrix_to_json),
        "Ftilde": coef_to_json(&p.mean_diffusion, matrix_to_json),
        "Q": coef_to_json(&p.state_weight, matrix_to_json),
        "R": coef_to_json(&p.control_weight, matrix_to_json),
        "Gamma": coef_to_json(&p.tracking_gain, matrix_to_json),
        "eta": coef_to_json(&p.tracking_offset, vector_to_json),
        "G": matrix_to_json(&p.terminal_weight),
        "GammaBar": matrix_to_json(&p.terminal_tracking_gain),
        "etaBar": vector_to_json(&p.terminal_offset),
        "xi0": vector_to_json(&p.initial_state),
    })
}

/// Coefficient set of the two-dimensional demonstration instance.
///
/// Terminal weight, terminal tracking gain and terminal offset are not part
/// of the published data and are set to zero.
pub const DEMO_CONFIG: &str = include_str!("../../configs/demo2d.json");

pub fn demo_params() -> ModelParams {
    parse_config(DEMO_CONFIG).expect("bundled config parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_parse_error() {
        assert!(matches!(parse_config(""), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_terminal_weight_is_named() {
        let mut v: Value = serde_json::from_str(DEMO_CONFIG).unwrap();
        v.as_object_mut().unwrap().remove("G");
        match parse_config(&v.to_string()) {
            Err(Error::Schema(field)) => assert_eq!(field, "G"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn demo_validates() {
        assert!(demo_params().validate().is_ok());
    }

    #[test]
    fn round_trip_is_exact() {
        let p = demo_params();
        let text = serde_json::to_string(&config_to_json(&p)).unwrap();
        assert_eq!(parse_config(&text).unwrap(), p);
    }

    #[test]
    fn sampled_coefficients_round_trip() {
        let mut p = demo_params();
        let nodes = p.grid.len();
        p.tracking_offset = Coef::Sampled(
            (0..nodes)
                .map(|k| DVector::from_vec(vec![k as f64 / 3.0, 0.1]))
                .collect(),
        );
        let text = serde_json::to_string(&config_to_json(&p)).unwrap();
        assert_eq!(parse_config(&text).unwrap(), p);
    }
}
