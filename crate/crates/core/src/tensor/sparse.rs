use crate::scalar::Scalar;

use super::{Matrix, TensorError};

/// Square sparse matrix in compressed-row form, used as a constant left
/// operand (the propagation operator of a graph convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<S> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> CsrMatrix<S> {
    /// Builds from per-row `(col, value)` lists. Columns within a row are
    /// sorted ascending.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(usize, S)>>) -> Self {
        assert_eq!(rows.len(), n, "row list length must equal n");
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                assert!(c < n, "column out of range");
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, S::one())]).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.row(i).find(|&(c, _)| c == j).map_or(S::zero(), |(_, v)| v)
    }

    pub fn to_dense(&self) -> Matrix<S> {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `self · x`.
    pub fn mul_dense(&self, x: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        if x.rows() != self.n {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                left: (self.n, self.n),
                right: x.shape(),
            });
        }
        let m = x.cols();
        let mut out = Matrix::zeros(self.n, m);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let src = x.row(j);
                for (o, &s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub fn transpose_mul_dense(&self, g: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
        if g.rows() != self.n {
            return Err(TensorError::ShapeMismatch {
                op: "spmm_t",
                left: (self.n, self.n),
                right: g.shape(),
            });
        }
        let m = g.cols();
        let mut out = Matrix::zeros(self.n, m);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let src = g.row(i);
                for (o, &s) in out.row_mut(j).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }
}
