//! Plain CSV matrices and vectors: no header, one row per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::Failure;

fn parse_rows(path: &Path) -> Result<Vec<(u64, Vec<f64>)>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| {
                    Failure::io(format!(
                        "{}:{line}: column {}: cannot parse {field:?} as a number",
                        path.display(),
                        col + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Failure::io(format!(
                "{}:{line}: column {}: value is not finite",
                path.display(),
                bad + 1
            )));
        }
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(Failure::io(format!("{}: no data", path.display())));
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, Failure> {
    let rows = parse_rows(path)?;
    let cols = rows[0].1.len();
    for (line, row) in &rows {
        if row.len() != cols {
            return Err(Failure::io(format!(
                "{}:{line}: expected {cols} columns, found {}",
                path.display(),
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.into_iter().flat_map(|(_, r)| r),
    ))
}

/// Either one value per line or a single row.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, Failure> {
    let mut rows = parse_rows(path)?;
    if rows.len() == 1 {
        return Ok(rows.pop().map(|(_, r)| r).unwrap_or_default());
    }
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != 1 {
            return Err(Failure::io(format!(
                "{}:{line}: expected one value per line, found {}",
                path.display(),
                row.len()
            )));
        }
        out.push(row[0]);
    }
    Ok(out)
}

/// Shortest round-trip text, switching to exponent form for very small or
/// very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn matrix_to_csv(a: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..a.nrows() {
        let row: Vec<String> = a.row(i).iter().map(|&v| num(v)).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn vector_to_csv(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        let _ = writeln!(s, "{}", num(*x));
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}
