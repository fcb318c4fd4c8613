//! Score-matrix files.
//!
//! Two formats are read. Text files are CSV, one row per line, no header;
//! blank lines and lines starting with `#` are skipped. Binary files start
//! with the magic `SMX1`, then rows and cols as little-endian `u32`, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BINARY_MAGIC: &[u8; 4] = b"SMX1";

pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

pub fn parse_binary(bytes: &[u8]) -> Result<Matrix<f64>> {
    let body = bytes
        .strip_prefix(BINARY_MAGIC.as_slice())
        .ok_or_else(|| Error::MalformedInput("missing SMX1 magic".into()))?;
    if body.len() < 8 {
        return Err(Error::MalformedInput("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(0), word(4));
    let payload = &body[8..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedInput(format!("shape {rows}x{cols} too large")))?;
    if payload.len() != expected {
        return Err(Error::MalformedInput(format!(
            "expected {expected} payload bytes for {rows}x{cols}, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn parse_csv(bytes: &[u8]) -> Result<Matrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::MalformedInput(format!("row {i}: {field:?} is not a number"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(rows)
}

pub fn encode_binary(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn encode_csv(m: &Matrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.iter_rows() {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_comments() {
        let m = parse_csv(b"# scores\n2, 1, 3\n\n0.25,-1,4\n").unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.row(1), &[0.25, -1.0, 4.0]);
        assert_eq!(parse_csv(&encode_csv(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv(b"1,2\n3\n"), Err(Error::RaggedMatrix { row: 1, .. })));
        assert!(matches!(parse_csv(b"1,x\n"), Err(Error::MalformedInput(_))));
        assert!(matches!(parse_csv(b""), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn binary_round_trip() {
        let m = Matrix::from_rows(vec![vec![2.0, 1.0, 3.0], vec![-0.5, 0.75, 8.0]]).unwrap();
        let bytes = encode_binary(&m);
        assert_eq!(&bytes[..4], b"SMX1");
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(parse_binary(&bytes).unwrap(), m);
    }

    #[test]
    fn binary_errors() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let bytes = encode_binary(&m);
        assert!(parse_binary(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_binary(&bytes[..10]).is_err());
        assert!(parse_binary(b"SMX2").is_err());
        let mut zero = b"SMX1".to_vec();
        zero.extend([0; 8]);
        assert!(matches!(parse_binary(&zero), Err(Error::EmptyMatrix)));
    }
}
