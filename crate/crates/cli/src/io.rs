//! Dataset CSV ingestion and emission.
//!
//! Dataset files carry a mandatory header `x1,...,xn,y` and plain decimal
//! numbers (no locale handling), so ingestion is bit-reproducible. Bound
//! tables use the header `x,y,bound_lo,bound_hi,method`.

use std::path::Path;

use probscale::Dataset;

use crate::error::{CliError, CliResult};

/// Read a dataset CSV, validating the `x1,...,xn,y` header. Errors carry
/// the 1-based line number of the offending row.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let dim = validate_header(&headers, path)?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let line = row_index + 2; // 1-based, after the header line
        let record =
            record.map_err(|e| CliError::Usage(format!("{}:{line}: {e}", path.display())))?;
        if record.len() != dim + 1 {
            return Err(CliError::Usage(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                dim + 1,
                record.len()
            )));
        }
        for (column, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}:{line}: field {} is not a number: {field:?}",
                    path.display(),
                    column + 1
                ))
            })?;
            if column < dim {
                xs.push(value);
            } else {
                ys.push(value);
            }
        }
    }
    if ys.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Dataset::from_flat(xs, dim, ys).map_err(CliError::from)
}

fn validate_header(headers: &csv::StringRecord, path: &Path) -> CliResult<usize> {
    let n = headers.len();
    if n < 2 || headers.get(n - 1) != Some("y") {
        return Err(CliError::Usage(format!(
            "{}: header must be x1,...,xn,y (missing trailing y column)",
            path.display()
        )));
    }
    for i in 0..n - 1 {
        let expected = format!("x{}", i + 1);
        if headers.get(i) != Some(expected.as_str()) {
            return Err(CliError::Usage(format!(
                "{}: header column {} must be {expected}, found {:?}",
                path.display(),
                i + 1,
                headers.get(i).unwrap_or("")
            )));
        }
    }
    Ok(n - 1)
}

/// Write a dataset with the standard header.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?;
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    header.push("y".to_string());
    writer
        .write_record(&header)
        .and_then(|_| {
            for i in 0..data.len() {
                let mut row: Vec<String> =
                    data.x(i).iter().map(|v| format!("{v}")).collect();
                row.push(format!("{}", data.y(i)));
                writer.write_record(&row)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// One row of the emitted bound table.
pub struct BoundRow {
    pub x: f64,
    pub y: f64,
    pub bound_lo: f64,
    pub bound_hi: f64,
}

/// Write a `x,y,bound_lo,bound_hi,method` table.
pub fn write_bounds(path: &Path, rows: &[BoundRow], method: &str) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?;
    writer
        .write_record(["x", "y", "bound_lo", "bound_hi", "method"])
        .and_then(|_| {
            for row in rows {
                writer.write_record([
                    format!("{}", row.x),
                    format!("{}", row.y),
                    format!("{}", row.bound_lo),
                    format!("{}", row.bound_hi),
                    method.to_string(),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}
