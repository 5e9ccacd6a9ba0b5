//! CSV serialization of sample matrices: header row, one sample per
//! line, doubles rendered in shortest round-trip decimal.

use ndarray::Array2;

use crate::error::{CliError, Result};

pub fn matrix_to_csv(header: &[String], data: &Array2<f64>) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in data.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Strict dataset read: every cell must parse to a finite double.
pub fn matrix_from_csv(path: &std::path::Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = headers.len();
    let mut flat = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        if record.len() != cols {
            return Err(CliError::Io(format!(
                "{}: row {} has {} fields, expected {cols}",
                path.display(),
                i + 2,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Io(format!(
                    "{}: row {} has non-numeric field {field:?}",
                    path.display(),
                    i + 2
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Io(format!(
                    "{}: row {} has non-finite value {v}",
                    path.display(),
                    i + 2
                )));
            }
            flat.push(v);
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok((headers, data))
}

/// Tolerant column read for ingestion: selected columns are parsed and
/// rows with missing or non-finite values are dropped. Returns the kept
/// rows, their original 1-based line numbers, and the dropped count.
pub fn columns_from_csv(
    path: &std::path::Path,
    columns: &[String],
) -> Result<(Array2<f64>, Vec<usize>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let indices: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| CliError::Config(format!("column {c:?} not found in {headers:?}")))
        })
        .collect::<Result<_>>()?;

    let mut flat = Vec::new();
    let mut kept_lines = Vec::new();
    let mut dropped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        let mut row = Vec::with_capacity(indices.len());
        let mut ok = true;
        for &c in &indices {
            match record.get(c).and_then(|f| f.trim().parse::<f64>().ok()) {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            flat.extend_from_slice(&row);
            kept_lines.push(i + 2); // 1-based, after the header line
        } else {
            dropped += 1;
        }
    }
    let data = Array2::from_shape_vec((kept_lines.len(), indices.len()), flat)
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok((data, kept_lines, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_shortest_decimal() {
        let data = array![[0.1, 2.0], [1.0 / 3.0, -4.5e-17]];
        let bytes = matrix_to_csv(&["a".into(), "b".into()], &data);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, &bytes).unwrap();
        let (headers, back) = matrix_from_csv(&path).unwrap();
        assert_eq!(headers, vec!["a", "b"]);
        assert_eq!(back, data); // bit-exact round trip
    }

    #[test]
    fn column_selection_drops_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,y,z\n1,2,3\n4,oops,6\n7,8,nan\n10,11,12\n").unwrap();
        let (data, lines, dropped) =
            columns_from_csv(&path, &["x".into(), "z".into()]).unwrap();
        // the nan row is dropped; "oops" sits in an unselected column
        assert_eq!(dropped, 1);
        assert_eq!(lines, vec![2, 3, 5]);
        assert_eq!(data, array![[1.0, 3.0], [4.0, 6.0], [10.0, 12.0]]);
    }

    #[test]
    fn missing_column_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,y\n1,2\n").unwrap();
        assert!(matches!(
            columns_from_csv(&path, &["q".into()]),
            Err(CliError::Config(_))
        ));
    }
}
