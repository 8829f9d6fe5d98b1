use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::FeatureSplitDataset;

/// Column mapping and preprocessing options for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Column names making up the federated block, in order.
    pub federated: Vec<String>,
    /// Column names making up the centralized block, in order.
    pub centralized: Vec<String>,
    /// Integer-valued label column; labels must be dense in `[0, C)`.
    pub label: String,
    /// Standardize feature columns to zero mean / unit variance.
    #[serde(default = "default_standardize")]
    pub standardize: bool,
    /// Leading fraction of rows that counts as the training portion for
    /// standardization statistics (test rows must not leak into them).
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_standardize() -> bool {
    true
}

fn default_train_fraction() -> f64 {
    0.8
}

impl CsvSchema {
    pub fn new(federated: Vec<String>, centralized: Vec<String>, label: String) -> Self {
        CsvSchema {
            federated,
            centralized,
            label,
            standardize: default_standardize(),
            train_fraction: default_train_fraction(),
        }
    }
}

fn column_indices(headers: &csv::StringRecord, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CoreError::Schema(format!("column '{name}' not found")))
        })
        .collect()
}

fn standardize_columns(matrix: &mut Array2<f64>, train_rows: usize) {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return;
    }
    for mut col in matrix.columns_mut() {
        let stats: Vec<f64> = col.iter().take(train_rows).copied().collect();
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        let var = stats.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / stats.len() as f64;
        let denom = var.max(1e-12).sqrt();
        col.mapv_inplace(|v| (v - mean) / denom);
    }
}

/// Loads a header-ed CSV into a feature-split dataset. Cells are parsed as
/// 64-bit reals; the first unparsable cell aborts with its 1-based data row
/// number. When `standardize` is set, per-column statistics come from the
/// leading `train_fraction` of rows only.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<FeatureSplitDataset> {
    let file = File::open(path)?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| CoreError::Input(format!("cannot read header: {e}")))?
        .clone();
    let fed_idx = column_indices(&headers, &schema.federated)?;
    let cen_idx = column_indices(&headers, &schema.centralized)?;
    let label_idx = column_indices(&headers, std::slice::from_ref(&schema.label))?[0];

    let mut fed_rows: Vec<f64> = Vec::new();
    let mut cen_rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CoreError::Input(format!("row {}: {e}", row_no + 1)))?;
        let cell = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| {
                CoreError::Input(format!("row {}: missing column {idx}", row_no + 1))
            })
        };
        for &idx in &fed_idx {
            let raw = cell(idx)?;
            fed_rows.push(raw.trim().parse::<f64>().map_err(|_| {
                CoreError::Input(format!(
                    "row {}: cannot parse '{raw}' in column '{}'",
                    row_no + 1,
                    headers.get(idx).unwrap_or("?")
                ))
            })?);
        }
        for &idx in &cen_idx {
            let raw = cell(idx)?;
            cen_rows.push(raw.trim().parse::<f64>().map_err(|_| {
                CoreError::Input(format!(
                    "row {}: cannot parse '{raw}' in column '{}'",
                    row_no + 1,
                    headers.get(idx).unwrap_or("?")
                ))
            })?);
        }
        let raw = cell(label_idx)?;
        let label = raw.trim().parse::<i64>().map_err(|_| {
            CoreError::Input(format!(
                "row {}: label '{raw}' is not an integer",
                row_no + 1
            ))
        })?;
        if label < 0 {
            return Err(CoreError::Input(format!(
                "row {}: negative label {label}",
                row_no + 1
            )));
        }
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(CoreError::Input("csv file has no data rows".into()));
    }

    let n = labels.len();
    let mut fed = Array2::from_shape_vec((n, fed_idx.len()), fed_rows)
        .map_err(|e| CoreError::Shape(e.to_string()))?;
    let mut cen = Array2::from_shape_vec((n, cen_idx.len()), cen_rows)
        .map_err(|e| CoreError::Shape(e.to_string()))?;
    if schema.standardize {
        if !(schema.train_fraction > 0.0 && schema.train_fraction <= 1.0) {
            return Err(CoreError::Config("train_fraction must be in (0,1]".into()));
        }
        let train_rows = ((n as f64 * schema.train_fraction).ceil() as usize).clamp(1, n);
        standardize_columns(&mut fed, train_rows);
        standardize_columns(&mut cen, train_rows);
    }
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    FeatureSplitDataset::new(fed, cen, labels, num_classes.max(2))
}

/// Writes a dataset back out with generated headers `f0.., c0.., label`.
/// Values use the shortest round-trippable decimal form, so a
/// `write_csv` / `load_csv` cycle (without standardization) is exact.
pub fn write_csv(ds: &FeatureSplitDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = Vec::new();
    header.extend((0..ds.fed_dim()).map(|i| format!("f{i}")));
    header.extend((0..ds.cen_dim()).map(|i| format!("c{i}")));
    header.push("label".into());
    writeln!(w, "{}", header.join(","))?;
    for id in 0..ds.len() {
        let mut cells: Vec<String> = Vec::with_capacity(header.len());
        cells.extend(ds.fed_row(id).iter().map(|v| v.to_string()));
        cells.extend(ds.cen_row(id).iter().map(|v| v.to_string()));
        cells.push(ds.label(id).to_string());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
