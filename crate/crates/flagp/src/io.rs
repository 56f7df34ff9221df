//! CSV tables and JSON files.
//!
//! Tables have a header row and one record per row; every other field must
//! parse as a float. Floats are written in their shortest round-trip form, so
//! write followed by read is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use flagp_core::dataset::InputRange;
use flagp_core::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A header plus an `n x k` block of numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| CliError::io(path, e))?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::Data(format!("{}: missing header row", path.display())));
    }
    let k = headers.len();
    let mut values = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != k {
            return Err(CliError::Data(format!(
                "{}: line {line}: expected {k} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("{}: line {line}, column {}: cannot parse {field:?} as a number", path.display(), col + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("{}: line {line}, column {}: non-finite value", path.display(), col + 1)));
            }
            values.push(v);
        }
        n += 1;
    }
    Ok(Table { headers, rows: DMatrix::from_row_slice(n, k, &values) })
}

pub fn write_table(path: &Path, headers: &[String], rows: &DMatrix<f64>) -> CliResult<()> {
    if headers.len() != rows.ncols() {
        return Err(CliError::Data(format!("{} headers for {} columns", headers.len(), rows.ncols())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(headers).map_err(|e| CliError::io(path, e))?;
    for i in 0..rows.nrows() {
        w.write_record(rows.row(i).iter().map(|v| v.to_string())).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes rows of already-formatted fields.
pub fn write_records(path: &Path, headers: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(headers).map_err(|e| CliError::io(path, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_ranges(path: &Path) -> CliResult<Vec<InputRange>> {
    let ranges: Vec<InputRange> = read_json(path)?;
    for r in &ranges {
        if !(r.lo < r.hi) {
            return Err(CliError::Data(format!("{}: range {:?} needs lo < hi", path.display(), r.name)));
        }
    }
    Ok(ranges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2e-300, 1e300, 0.0, std::f64::consts::PI]);
        let headers = vec!["a".to_string(), "b".into(), "c".into()];
        write_table(&path, &headers, &rows).unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.headers, headers);
        assert_eq!(t.rows, rows);
    }

    #[test]
    fn reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n1,2\n3,oops\n").unwrap();
        let msg = read_table(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3, column 2"), "{msg}");
        std::fs::write(&path, "x,y\n1,2\n3\n").unwrap();
        let msg = read_table(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let missing = read_table(&dir.path().join("none.csv")).unwrap_err();
        assert_eq!(missing.exit_code(), 3);
    }
}
