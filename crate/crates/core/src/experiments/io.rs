//! Headerless CSV matrices and the JSON result format.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Result, SkfError};
use crate::numerics::{Matrix, Vector};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SkfError + '_ {
    move |source| SkfError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, message: impl Into<String>) -> SkfError {
    SkfError::Parse { path: path.display().to_string(), message: message.into() }
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    parse_err(path, format!("line {}: '{field}' is not a number", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, format!("line {}: non-finite entry", line + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no data"));
    }
    Ok(rows)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let rows = read_rows(path)?;
    let cols = rows[0].len();
    Ok(Matrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// A single-column CSV.
pub fn read_vector_csv(path: &Path) -> Result<Vector> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(parse_err(path, format!("expected one column, found {}", m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

/// 1-based indices, one per line (or comma separated), returned 0-based
/// and sorted.
pub fn read_indices_csv(path: &Path, bound: usize) -> Result<Vec<usize>> {
    let rows = read_rows(path)?;
    let mut out = Vec::new();
    for v in rows.into_iter().flatten() {
        if v.fract() != 0.0 || v < 1.0 || v > bound as f64 {
            return Err(parse_err(path, format!("index {v} is not an integer in 1..={bound}")));
        }
        out.push(v as usize - 1);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut text = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_vector_csv(path: &Path, v: &Vector) -> Result<()> {
    write_matrix_csv(path, &Matrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Serializes an infinite threshold as the string `"inf"`.
pub fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*t)
    }
}

/// The `select` output.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionRecord {
    pub nu: f64,
    pub q: f64,
    pub plus: bool,
    #[serde(rename = "T_q", serialize_with = "serialize_threshold")]
    pub threshold: f64,
    /// 1-based.
    pub selected: Vec<usize>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Vec<f64>,
    #[serde(rename = "Z_tilde")]
    pub z_tilde: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fdr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
}
