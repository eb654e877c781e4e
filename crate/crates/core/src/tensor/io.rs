//! Matrix dump formats.
//!
//! `.bin`: two little-endian `u64` (rows, cols) then row-major
//! little-endian `f64`. `.tsv`: one row per line, entries separated by
//! tabs, each written with 17 significant digits.

use std::io::{BufRead, Read, Write};

use thiserror::Error;

use crate::scalar::Scalar;

use super::Matrix;

#[derive(Debug, Error)]
pub enum MatrixFormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("header declares {rows}x{cols} but payload is truncated")]
    Truncated { rows: u64, cols: u64 },
}

pub fn write_matrix_bin<S: Scalar, W: Write>(m: &Matrix<S>, mut w: W) -> std::io::Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Reads one matrix record; several records may follow each other in a stream.
pub fn read_matrix_bin<S: Scalar, R: Read>(mut r: R) -> Result<Matrix<S>, MatrixFormatError> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word);
    let len = rows
        .checked_mul(cols)
        .ok_or(MatrixFormatError::Truncated { rows, cols })? as usize;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        r.read_exact(&mut word).map_err(|_| MatrixFormatError::Truncated { rows, cols })?;
        data.push(S::lit(f64::from_le_bytes(word)));
    }
    Ok(Matrix::new(rows as usize, cols as usize, data).expect("length checked"))
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_tsv<S: Scalar, W: Write>(m: &Matrix<S>, mut w: W) -> std::io::Result<()> {
    let mut line = String::new();
    for row in m.row_iter().take(m.rows()) {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push('\t');
            }
            line.push_str(&format_f64(v.as_f64()));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Parses whitespace-separated decimals, one row per non-empty line. All
/// rows must have the same width.
pub fn read_matrix_tsv<S: Scalar, R: BufRead>(r: R) -> Result<Matrix<S>, MatrixFormatError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| MatrixFormatError::Parse {
                line: i + 1,
                message: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(MatrixFormatError::Parse { line: i + 1, message: format!("non-finite value {tok:?}") });
            }
            data.push(S::lit(v));
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(MatrixFormatError::Parse {
                    line: i + 1,
                    message: format!("expected {c} columns, found {count}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(Matrix::new(rows, cols.unwrap_or(0), data).expect("row widths checked"))
}
