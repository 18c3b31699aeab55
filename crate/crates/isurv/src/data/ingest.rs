//! CSV ingestion with z-score standardization and one-hot encoding.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;

use crate::data::{Standardizer, SurvivalDataset};
use crate::error::{Error, Result};

/// Load a survival dataset from a headered CSV file.
///
/// Numeric feature columns are z-score standardized; a column is treated as
/// categorical as soon as any value fails to parse as a number, and expands to
/// one indicator column per level (levels in sorted order). Rows containing
/// missing (empty) cells are dropped with a warning.
pub fn load_csv(path: &Path, time_column: &str, event_column: &str) -> Result<SurvivalDataset> {
    let ds = load_csv_inner(path, time_column, event_column, true)?;
    Ok(ds)
}

/// Same parsing and encoding as [`load_csv`] but without standardization.
pub fn load_csv_raw(path: &Path, time_column: &str, event_column: &str) -> Result<SurvivalDataset> {
    load_csv_inner(path, time_column, event_column, false)
}

fn load_csv_inner(
    path: &Path,
    time_column: &str,
    event_column: &str,
    standardize: bool,
) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let time_idx = headers
        .iter()
        .position(|h| h == time_column)
        .ok_or_else(|| Error::Schema(format!("column '{time_column}' not found in {path:?}")))?;
    let event_idx = headers
        .iter()
        .position(|h| h == event_column)
        .ok_or_else(|| Error::Schema(format!("column '{event_column}' not found in {path:?}")))?;
    if time_idx == event_idx {
        return Err(Error::Schema("time and event columns must differ".into()));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Schema(format!(
                "row with {} cells does not match header of {}",
                record.len(),
                headers.len()
            )));
        }
        let cells: Vec<String> = record.iter().map(|c| c.to_string()).collect();
        if cells.iter().any(|c| c.is_empty()) {
            dropped += 1;
            continue;
        }
        rows.push(cells);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing values from {path:?}");
    }
    if rows.len() < 2 {
        return Err(Error::Size(format!(
            "need at least 2 complete rows, got {} in {path:?}",
            rows.len()
        )));
    }

    let mut times = Vec::with_capacity(rows.len());
    let mut events = Vec::with_capacity(rows.len());
    for cells in &rows {
        let t: f64 = cells[time_idx]
            .parse()
            .map_err(|_| Error::Validation(format!("time value '{}' is not numeric", cells[time_idx])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Validation(format!("time value {t} must be finite and non-negative")));
        }
        times.push(t);
        let raw_event = &cells[event_idx];
        match raw_event.parse::<f64>() {
            Ok(v) if v == 0.0 => events.push(0),
            Ok(v) if v == 1.0 => events.push(1),
            _ => {
                return Err(Error::Validation(format!(
                    "event value '{raw_event}' is not a binary indicator"
                )))
            }
        }
    }

    // Feature columns keep their file order; categorical ones expand in place.
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != time_idx && j != event_idx)
        .collect();
    let mut columns: Vec<(String, Vec<f64>, bool)> = Vec::new();
    for &j in &feature_cols {
        let numeric: Option<Vec<f64>> = rows
            .iter()
            .map(|cells| cells[j].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match numeric {
            Some(values) => columns.push((headers[j].clone(), values, true)),
            None => {
                let levels: BTreeSet<String> = rows.iter().map(|cells| cells[j].clone()).collect();
                for level in levels {
                    let indicator: Vec<f64> = rows
                        .iter()
                        .map(|cells| if cells[j] == level { 1.0 } else { 0.0 })
                        .collect();
                    columns.push((format!("{}={}", headers[j], level), indicator, false));
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::Schema("no feature columns besides time and event".into()));
    }

    let n = rows.len();
    let d = columns.len();
    let mut features = Array2::zeros((n, d));
    for (j, (_, values, _)) in columns.iter().enumerate() {
        for (i, &v) in values.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    if standardize {
        let numeric_cols: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter_map(|(j, (_, _, is_num))| is_num.then_some(j))
            .collect();
        if !numeric_cols.is_empty() {
            let scaler = Standardizer::fit(&features);
            for &j in &numeric_cols {
                for i in 0..n {
                    features[[i, j]] = (features[[i, j]] - scaler.means[j]) / scaler.stds[j];
                }
            }
        }
    }

    let names = columns.into_iter().map(|(name, _, _)| name).collect();
    SurvivalDataset::new(features, times, events, Some(names))
}
