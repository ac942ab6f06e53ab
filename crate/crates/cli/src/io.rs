//! CSV matrices (row-major, `.` decimal) and JSON documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use graphsel::linalg::Mat;
use serde::Serialize;

use crate::error::CliError;

pub fn read_matrix(path: &Path, header: bool) -> Result<Mat, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "{}: row {}: '{t}' is not a number",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(CliError::Config(format!("{}: no data", path.display())));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!(
            "{}: rows have different lengths",
            path.display()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!(
            "{}: values must be finite",
            path.display()
        )));
    }
    Ok(Mat::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Header row followed by rows of already formatted fields.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
