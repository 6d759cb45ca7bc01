//! CSV ingestion and dataset snapshots.
//!
//! Input files are RFC-4180 style: first row headers, UTF-8, `.` decimal
//! separator. Snapshots written by [`write_dataset_csv`] append a `target`
//! column and, when roles are assigned, a `role` column, and can be read
//! back with [`read_dataset_csv`].

use std::path::Path;

use super::{Dataset, Matrix, Role};
use crate::error::{Error, Result};

/// Load a dataset from a CSV file, selecting the target and feature columns
/// by name. Rows with missing or non-numeric values in any selected column
/// are reported together in a single error indexed by 1-based data row.
/// The returned dataset carries no role labels.
pub fn load_csv(path: &Path, target: &str, features: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let target_idx = col_index(target)?;
    let feature_idx: Vec<usize> = features
        .iter()
        .map(|f| col_index(f))
        .collect::<Result<_>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut responses: Vec<f64> = Vec::new();
    let mut bad_rows: Vec<usize> = Vec::new();
    let mut first_detail = String::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(feature_idx.len());
        let mut ok = true;
        let mut note = |col: &str, raw: &str| {
            if first_detail.is_empty() {
                first_detail = format!("column '{col}' value '{raw}' is not numeric");
            }
        };
        for (&idx, name) in feature_idx.iter().zip(features) {
            match record.get(idx).map(str::trim) {
                Some(raw) if !raw.is_empty() => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        ok = false;
                        note(name, raw);
                    }
                },
                _ => {
                    ok = false;
                    note(name, "");
                }
            }
        }
        let y = match record.get(target_idx).map(str::trim) {
            Some(raw) if !raw.is_empty() => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    ok = false;
                    note(target, raw);
                    None
                }
            },
            _ => {
                ok = false;
                note(target, "");
                None
            }
        };
        if ok {
            rows.push(row);
            responses.push(y.unwrap());
        } else {
            bad_rows.push(row_no);
        }
    }
    if !bad_rows.is_empty() {
        return Err(Error::InvalidRows {
            rows: bad_rows,
            detail: first_detail,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyData("csv file has no data rows"));
    }
    Dataset::new(Matrix::from_rows(&rows)?, responses, features.to_vec())
}

/// Write a dataset snapshot: feature columns, `target`, and `role` when
/// labels are assigned. Floats use the shortest representation that parses
/// back to the identical value, so snapshots round-trip exactly.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = data.feature_names().to_vec();
    header.push("target".into());
    if data.roles().is_some() {
        header.push("role".into());
    }
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut record: Vec<String> = data
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        record.push(format!("{}", data.responses()[i]));
        if let Some(roles) = data.roles() {
            record.push(roles[i].as_str().to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a snapshot produced by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == "target")
        .ok_or_else(|| Error::MissingColumn("target".into()))?;
    let role_idx = headers.iter().position(|h| h == "role");
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx && Some(*i) != role_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut responses = Vec::new();
    let mut roles = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |raw: Option<&str>, what: &str| -> Result<f64> {
            raw.map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidRows {
                    rows: vec![i + 1],
                    detail: format!("column '{what}' is not numeric"),
                })
        };
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, h) in headers.iter().enumerate() {
            if j == target_idx || Some(j) == role_idx {
                continue;
            }
            row.push(parse(record.get(j), h)?);
        }
        responses.push(parse(record.get(target_idx), "target")?);
        if let Some(ri) = role_idx {
            let raw = record.get(ri).unwrap_or("").trim();
            roles.push(Role::parse(raw)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData("csv file has no data rows"));
    }
    let data = Dataset::new(Matrix::from_rows(&rows)?, responses, feature_names)?;
    if role_idx.is_some() {
        data.with_roles(roles)
    } else {
        Ok(data)
    }
}
