//! Plain-text formats: matrices and datasets as CSV, everything else JSON.

use std::fs;
use std::path::Path;

use hdpfl_core::models_data::Dataset;
use hdpfl_core::DenseMatrix;
use serde::Serialize;

use crate::error::{HarnessError, Result};

fn csv_err(path: &Path, line: Option<u64>, message: impl Into<String>) -> HarnessError {
    HarnessError::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn from_csv_error(path: &Path, e: csv::Error) -> HarnessError {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => csv_err(path, line, format!("{other:?}")),
    }
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| csv_err(path, Some(line), format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(csv_err(path, Some(line), format!("`{field}` is not finite")));
    }
    Ok(v)
}

/// One matrix row per line, comma-separated, no header.
pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| from_csv_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| from_csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(csv_err(path, Some(line), format!("{} fields, expected {c}", rec.len())));
            }
            _ => {}
        }
        for field in rec.iter() {
            data.push(parse_f64(path, line, field)?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| csv_err(path, None, "no rows"))?;
    Ok(DenseMatrix::from_vec(rows, cols, data)?)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| from_csv_error(path, e))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| format_f64(*v)))
            .map_err(|e| from_csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Shortest decimal that parses back to the same value; exponent form
/// outside `[1e-4, 1e16)`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Header `f0,…,f{d-1},label`; labels are class indices.
///
/// `classes` defaults to one more than the largest label.
pub fn read_dataset(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| from_csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| from_csv_error(path, e))?.clone();
    let n = header.len();
    if n < 2 || header.get(n - 1).map(str::trim) != Some("label") {
        return Err(csv_err(path, Some(1), "header must be f0,...,f{d-1},label"));
    }
    let dim = n - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| from_csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        for field in rec.iter().take(dim) {
            features.push(parse_f64(path, line, field)?);
        }
        let y: usize = rec[dim]
            .trim()
            .parse()
            .map_err(|_| csv_err(path, Some(line), format!("label `{}` is not a class index", &rec[dim])))?;
        labels.push(y);
    }
    let max = labels.iter().copied().max().ok_or_else(|| csv_err(path, None, "no samples"))?;
    let classes = classes.unwrap_or(max + 1);
    if max >= classes {
        return Err(csv_err(path, None, format!("label {max} out of range for {classes} classes")));
    }
    Ok(Dataset::new(features, labels, dim, classes)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| from_csv_error(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| from_csv_error(path, e))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features(i).iter().map(|v| format_f64(*v)).collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec).map_err(|e| from_csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Usage(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DenseMatrix::from_rows(&[vec![1.0, -2.5e-9], vec![3.0e20, 0.1]]).unwrap();
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn ragged_matrix_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(matches!(err, HarnessError::Csv { line: Some(2), .. }), "{err}");
        fs::write(&p, "1,x\n").unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = Dataset::new(vec![0.5, 1.0, -1.0, 2.0, 3.0, 4.0], vec![0, 2, 1], 2, 3).unwrap();
        write_dataset(&p, &d).unwrap();
        let back = read_dataset(&p, None).unwrap();
        assert_eq!(back, d);
        assert_eq!(read_dataset(&p, Some(5)).unwrap().classes(), 5);
        assert!(read_dataset(&p, Some(2)).is_err());
    }

    #[test]
    fn missing_file_is_io() {
        let err = read_matrix(Path::new("/nonexistent/m.csv")).unwrap_err();
        assert_eq!(err.kind(), "io");
    }

    proptest! {
        #[test]
        fn formatting_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
