//! Dense row-major matrices, a constant sparse operator, and a small
//! reverse-mode gradient tape over a fixed catalog of primitives.
//!
//! Every reduction runs in a fixed order so repeated evaluations are
//! bit-identical. Matrix products parallelize over output rows only; the
//! inner summation order per entry never changes.

mod check;
mod io;
mod sparse;
mod tape;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use check::{finite_difference_check, row_l2_normalize, softmax_cross_entropy};
pub use io::{read_matrix_bin, read_matrix_tsv, write_matrix_bin, write_matrix_tsv, MatrixFormatError};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Reduction, Tape, Var};

/// Rows at or below this count are multiplied on the calling thread.
const PAR_ROW_THRESHOLD: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("row {row} has near-zero norm {norm:e}; cannot normalize")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("target row {row} is not a probability distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("backward already ran on this tape; record a new forward first")]
    BackwardTwice,

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),

    #[error("row index {index} out of range for {rows} rows")]
    RowIndex { index: usize, rows: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix<S>", bound(deserialize = "S: Deserialize<'de>"))]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

#[derive(Deserialize)]
struct RawMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S> TryFrom<RawMatrix<S>> for Matrix<S> {
    type Error = TensorError;

    fn try_from(raw: RawMatrix<S>) -> Result<Self, TensorError> {
        if raw.rows.checked_mul(raw.cols) != Some(raw.data.len()) {
            return Err(TensorError::BadLength { rows: raw.rows, cols: raw.cols, len: raw.data.len() });
        }
        Ok(Self { rows: raw.rows, cols: raw.cols, data: raw.data })
    }
}

impl<S: fmt::Debug> fmt::Debug for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "\n  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        if self.rows > 8 {
            write!(f, "\n  ...")?;
        }
        write!(f, "]")
    }
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows given as `f64`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::BadLength { rows: rows.len(), cols, len: r.len() });
            }
            data.extend(r.iter().map(|&v| S::lit(v)));
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[S]> {
        // chunks_exact panics on zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`, summing over the shared index in ascending order.
    pub fn matmul(&self, other: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![S::zero(); n * m];
        let row_kernel = |(i, out_row): (usize, &mut [S])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let b_row = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if m > 0 {
            if n > PAR_ROW_THRESHOLD {
                out.par_chunks_mut(m).enumerate().for_each(row_kernel);
            } else {
                out.chunks_mut(m).enumerate().for_each(row_kernel);
            }
        }
        Ok(Matrix { rows: n, cols: m, data: out })
    }

    pub fn transpose(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same(&self, other: &Matrix<S>, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch { op, left: self.shape(), right: other.shape() });
        }
        Ok(())
    }

    pub fn zip_map(
        &self,
        other: &Matrix<S>,
        op: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Matrix<S>, TensorError> {
        self.check_same(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: S) -> Matrix<S> {
        self.map(|v| v * s)
    }

    /// In-place `self -= step * grad`.
    pub fn axpy_neg(&mut self, step: S, grad: &Matrix<S>) -> Result<(), TensorError> {
        self.check_same(grad, "axpy")?;
        for (w, &g) in self.data.iter_mut().zip(&grad.data) {
            *w -= step * g;
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v)
    }

    pub fn row_sums(&self) -> Vec<S> {
        self.row_iter().map(|r| r.iter().fold(S::zero(), |acc, &v| acc + v)).collect()
    }

    pub fn col_sums(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.cols];
        for r in self.row_iter() {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn row_norms(&self) -> Vec<S> {
        self.row_iter().map(l2_norm).collect()
    }

    pub fn frobenius_sq(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v * v)
    }

    pub fn max_abs_diff(&self, other: &Matrix<S>) -> Result<S, TensorError> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix<S>, TensorError> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(TensorError::RowIndex { index: i, rows: self.rows });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix { rows: idx.len(), cols: self.cols, data })
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.row_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::lit(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn l2_norm<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt()
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}
