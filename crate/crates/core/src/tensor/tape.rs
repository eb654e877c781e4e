//! Reverse-mode gradient tape over a fixed primitive catalog.
//!
//! Each primitive records its inputs and whatever forward values its
//! backward rule needs. `backward` walks the records once, newest first.

use crate::scalar::Scalar;

use super::{CsrMatrix, Matrix, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op<'a, S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SpMM(&'a CsrMatrix<S>, Var),
    Relu(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    RowSum(Var),
    SelectRows(Var, Vec<usize>),
    RowNormalize { input: Var, norms: Vec<S> },
    SoftmaxXent { logits: Var, target: Matrix<S>, probs: Matrix<S> },
    SquaredError { input: Var, target: Matrix<S>, reduction: Reduction },
}

struct Node<'a, S> {
    value: Matrix<S>,
    op: Op<'a, S>,
    requires_grad: bool,
}

/// Single-threaded record of a forward computation.
pub struct Tape<'a, S> {
    nodes: Vec<Node<'a, S>>,
    spent: bool,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every recorded value that
/// requires one.
pub struct Gradients<S> {
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Matrix<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix<S> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), spent: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<S>, op: Op<'a, S>, requires_grad: bool) -> Var {
        self.spent = false;
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<'a, S>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn needs(&self, vars: &[Var]) -> Result<bool, TensorError> {
        let mut any = false;
        for &v in vars {
            any |= self.node(v)?.requires_grad;
        }
        Ok(any)
    }

    fn finite(value: Matrix<S>, op: &'static str) -> Result<Matrix<S>, TensorError> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Trainable input.
    pub fn var(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = Self::finite(self.node(a)?.value.matmul(&self.node(b)?.value)?, "matmul")?;
        let rg = self.needs(&[a, b])?;
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.transpose();
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Constant sparse operator times `x`.
    pub fn spmm(&mut self, op: &'a CsrMatrix<S>, x: Var) -> Result<Var, TensorError> {
        let value = Self::finite(op.mul_dense(&self.node(x)?.value)?, "spmm")?;
        let rg = self.needs(&[x])?;
        Ok(self.push(value, Op::SpMM(op, x), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::Relu(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = Self::finite(self.node(a)?.value.add(&self.node(b)?.value)?, "add")?;
        let rg = self.needs(&[a, b])?;
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let bv = &self.node(bias)?.value;
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(TensorError::ShapeMismatch { op: "add_row", left: av.shape(), right: bv.shape() });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        let value = Self::finite(value, "add_row")?;
        let rg = self.needs(&[a, bias])?;
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var, TensorError> {
        let value = Self::finite(self.node(a)?.value.scale(s), "scale")?;
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    /// Sums each row into an `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let value = Matrix::new(av.rows(), 1, av.row_sums())?;
        let value = Self::finite(value, "row_sum")?;
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::RowSum(a), rg))
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let rs = self.row_sum(a)?;
        let t = self.transpose(rs)?;
        self.row_sum(t)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let value = self.node(a)?.value.select_rows(idx)?;
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// Scales each row to unit L2 norm. Rows with norm at most `1e-12`
    /// are rejected.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let norms = av.row_norms();
        let floor = S::lit(1e-12);
        let mut value = av.clone();
        for (r, &n) in norms.iter().enumerate() {
            if !(n > floor) {
                return Err(TensorError::DegenerateRow { row: r, norm: n.as_f64() });
            }
            for v in value.row_mut(r) {
                *v /= n;
            }
        }
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::RowNormalize { input: a, norms }, rg))
    }

    /// Mean over rows of the cross-entropy between `softmax(logits)` and a
    /// constant target distribution per row. Returns a `1 x 1` value.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Matrix<S>) -> Result<Var, TensorError> {
        let lv = &self.node(logits)?.value;
        if lv.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: lv.shape(),
                right: target.shape(),
            });
        }
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = S::zero();
        for r in 0..lv.rows() {
            check_distribution(target.row(r), r)?;
            let (loss, p) = row_softmax_xent(lv.row(r), target.row(r));
            probs.row_mut(r).copy_from_slice(&p);
            total += loss;
        }
        let n = S::from_usize(lv.rows().max(1)).unwrap();
        let value = Self::finite(Matrix::filled(1, 1, total / n), "softmax_cross_entropy")?;
        let rg = self.needs(&[logits])?;
        Ok(self.push(value, Op::SoftmaxXent { logits, target: target.clone(), probs }, rg))
    }

    /// `Σ (a - target)²`, or its mean over entries.
    pub fn squared_error(&mut self, a: Var, target: &Matrix<S>, reduction: Reduction) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let diff = av.sub(target)?;
        let mut total = diff.frobenius_sq();
        if reduction == Reduction::Mean {
            total /= S::from_usize(diff.data().len().max(1)).unwrap();
        }
        let value = Self::finite(Matrix::filled(1, 1, total), "squared_error")?;
        let rg = self.needs(&[a])?;
        Ok(self.push(value, Op::SquaredError { input: a, target: target.clone(), reduction }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: &Matrix<S>) -> Result<Var, TensorError> {
        self.squared_error(a, target, Reduction::Mean)
    }

    /// Propagates gradients of the `1 x 1` value `loss` to every recorded
    /// value that requires one. A second call without recording anything
    /// new is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>, TensorError> {
        if self.spent {
            return Err(TensorError::BackwardTwice);
        }
        let lv = &self.node(loss)?.value;
        if lv.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: lv.rows(), cols: lv.cols() });
        }
        self.spent = true;

        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, S::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut emit = |v: Var, contrib: Matrix<S>| -> Result<(), TensorError> {
                if !self.nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
                Ok(())
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.nodes[a.0].requires_grad {
                        emit(*a, g.matmul(&bv.transpose())?)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        emit(*b, av.transpose().matmul(&g)?)?;
                    }
                }
                Op::Transpose(a) => emit(*a, g.transpose())?,
                Op::SpMM(op, x) => emit(*x, op.transpose_mul_dense(&g)?)?,
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    emit(*a, g.zip_map(av, "relu_backward", |gv, x| if x > S::zero() { gv } else { S::zero() })?)?;
                }
                Op::Add(a, b) => {
                    emit(*a, g.clone())?;
                    emit(*b, g)?;
                }
                Op::AddRow(a, bias) => {
                    let colsum = g.col_sums();
                    emit(*a, g)?;
                    let cols = colsum.len();
                    emit(*bias, Matrix::new(1, cols, colsum)?)?;
                }
                Op::Scale(a, s) => emit(*a, g.scale(*s))?,
                Op::RowSum(a) => {
                    let cols = self.nodes[a.0].value.cols();
                    let rows = g.rows();
                    emit(*a, Matrix::from_fn(rows, cols, |r, _| g.get(r, 0)))?;
                }
                Op::SelectRows(a, rows) => {
                    let shape = self.nodes[a.0].value.shape();
                    let mut out = Matrix::zeros(shape.0, shape.1);
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, &v) in out.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    emit(*a, out)?;
                }
                Op::RowNormalize { input, norms } => {
                    // d/dx (x/|x|) applied to g: (g - y (y.g)) / |x|
                    let y = &node.value;
                    let mut out = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj = super::dot(yr, gr);
                        let n = norms[r];
                        for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * proj) / n;
                        }
                    }
                    emit(*input, out)?;
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let scale = g.get(0, 0) / S::from_usize(probs.rows().max(1)).unwrap();
                    emit(*logits, probs.zip_map(target, "xent_backward", |p, t| (p - t) * scale)?)?;
                }
                Op::SquaredError { input, target, reduction } => {
                    let av = &self.nodes[input.0].value;
                    let mut scale = S::lit(2.0) * g.get(0, 0);
                    if *reduction == Reduction::Mean {
                        scale /= S::from_usize(av.data().len().max(1)).unwrap();
                    }
                    emit(*input, av.zip_map(target, "sq_backward", |a, t| (a - t) * scale)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn check_distribution<S: Scalar>(target: &[S], row: usize) -> Result<(), TensorError> {
    let sum = target.iter().fold(S::zero(), |a, &b| a + b);
    let negative = target.iter().any(|&t| t < S::zero() || !t.is_finite());
    if negative || (sum - S::one()).abs() > S::lit(1e-9) {
        return Err(TensorError::NotADistribution { row, sum: sum.as_f64() });
    }
    Ok(())
}

/// Loss and softmax probabilities of one row, stabilized by subtracting
/// the row maximum.
pub(crate) fn row_softmax_xent<S: Scalar>(logits: &[S], target: &[S]) -> (S, Vec<S>) {
    let max = logits.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let shifted: Vec<S> = logits.iter().map(|&v| v - max).collect();
    let sum_exp = shifted.iter().fold(S::zero(), |a, &v| a + v.exp());
    let log_z = sum_exp.ln();
    let mut loss = S::zero();
    for (&t, &s) in target.iter().zip(&shifted) {
        if t != S::zero() {
            loss -= t * (s - log_z);
        }
    }
    let probs = shifted.iter().map(|&s| (s - log_z).exp()).collect();
    (loss, probs)
}
