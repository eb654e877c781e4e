use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tape};

use super::{Assignment, PrototypeBank};

/// Swapped-prediction loss value with gradients on the embeddings and on
/// the (unnormalized) prototype rows.
#[derive(Debug, Clone)]
pub struct SwappedLoss<S> {
    pub loss: S,
    pub grad_z: Matrix<S>,
    pub grad_bank: Matrix<S>,
}

/// Mean over rows of the cross-entropy between `softmax(z Ỹᵀ / τ)` and the
/// other view's assignment row. The assignment is a fixed target.
pub fn swapped_loss<S: Scalar>(
    z: &Matrix<S>,
    q_other: &Assignment<S>,
    bank: &PrototypeBank<S>,
    tau: f64,
) -> Result<SwappedLoss<S>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if z.rows() != q_other.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings but {} assignment rows",
            z.rows(),
            q_other.rows()
        )));
    }
    let mut tape = Tape::new();
    let zv = tape.var(z.clone());
    let bv = tape.var(bank.protos().clone());
    let bt = tape.transpose(bv)?;
    let logits = tape.matmul(zv, bt)?;
    let logits = tape.scale(logits, S::lit(1.0 / tau))?;
    let loss = tape.softmax_cross_entropy(logits, q_other.matrix())?;
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    Ok(SwappedLoss {
        loss: value,
        grad_z: grads.get_or_zeros(zv, z.shape()),
        grad_bank: grads.get_or_zeros(bv, bank.protos().shape()),
    })
}

/// Projects every prototype row back onto the unit sphere.
pub fn normalize_bank<S: Scalar>(rows: &Matrix<S>) -> Result<PrototypeBank<S>> {
    PrototypeBank::from_unnormalized(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, row_l2_normalize};

    #[test]
    fn identical_prototypes_give_ln_k() {
        let z = row_l2_normalize(&Matrix::<f64>::from_rows(&[&[0.2, 0.9], &[-1.0, 0.4]]).unwrap()).unwrap();
        let p = row_l2_normalize(&Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]).unwrap()).unwrap();
        let bank = PrototypeBank::new(p).unwrap();
        let q = Assignment::from_indices(&[0, 2], 3).unwrap();
        let l = swapped_loss(&z, &q, &bank, 0.1).unwrap();
        assert!((l.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_two_prototypes() {
        // z·ỹ1 = 1, z·ỹ2 = 0, target e1, τ = 1
        let z = Matrix::<f64>::from_rows(&[&[1.0, 0.0]]).unwrap();
        let bank = PrototypeBank::new(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()).unwrap();
        let q = Assignment::from_indices(&[0], 2).unwrap();
        let l = swapped_loss(&z, &q, &bank, 1.0).unwrap();
        assert!((l.loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn bank_gradient_matches_finite_differences() {
        let z = row_l2_normalize(&Matrix::<f64>::from_fn(5, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 1.7)).unwrap();
        let raw = Matrix::from_fn(2, 3, |r, c| 0.4 + r as f64 * 0.3 - c as f64 * 0.5);
        let q = Assignment::from_indices(&[0, 1, 1, 0, 1], 2).unwrap();
        let f = |rows: &Matrix<f64>| {
            // evaluate with the rows as given, no renormalization
            let bank = PrototypeBank { protos: rows.clone() };
            let l = swapped_loss(&z, &q, &bank, 0.5).unwrap();
            (l.loss, l.grad_bank)
        };
        assert!(finite_difference_check(f, &raw, 1e-6) <= 1e-4);
    }

    #[test]
    fn normalize_bank_scales_rows() {
        let b = normalize_bank(&Matrix::<f64>::from_rows(&[&[2.0, 0.0], &[0.0, 0.5]]).unwrap()).unwrap();
        assert_eq!(b.protos(), &Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        assert!(normalize_bank(&Matrix::<f64>::zeros(1, 2)).is_err());
    }
}
