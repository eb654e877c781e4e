use crate::scalar::Scalar;

use super::tape::{check_distribution, row_softmax_xent};
use super::{Matrix, Tape, TensorError};

/// Scales every row to unit L2 norm. A row with norm `<= 1e-12` is an
/// error rather than a division by (near) zero.
pub fn row_l2_normalize<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>, TensorError> {
    let mut tape = Tape::new();
    let x = tape.constant(m.clone());
    let y = tape.row_l2_normalize(x)?;
    Ok(tape.value(y).clone())
}

/// Cross-entropy of `softmax(logits)` against `target`, and its gradient
/// `softmax(logits) - target` with respect to the logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], target: &[S]) -> Result<(S, Vec<S>), TensorError> {
    if logits.len() != target.len() {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: (1, logits.len()),
            right: (1, target.len()),
        });
    }
    check_distribution(target, 0)?;
    let (loss, probs) = row_softmax_xent(logits, target);
    let grad = probs.iter().zip(target).map(|(&p, &t)| p - t).collect();
    Ok((loss, grad))
}

/// Largest relative discrepancy between an analytic gradient and central
/// differences with step `h`: `max |g - g_fd| / max(1, |g_fd|)`.
///
/// `f` returns the function value and its analytic gradient at a point.
pub fn finite_difference_check<S, F>(f: F, x: &Matrix<S>, h: S) -> S
where
    S: Scalar,
    F: Fn(&Matrix<S>) -> (S, Matrix<S>),
{
    let (_, analytic) = f(x);
    let two_h = h + h;
    let mut worst = S::zero();
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (plus, _) = f(&probe);
        probe.data_mut()[i] = orig - h;
        let (minus, _) = f(&probe);
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / two_h;
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(S::one());
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four() {
        let m = Matrix::<f64>::from_rows(&[&[3.0, 4.0]]).unwrap();
        let n = row_l2_normalize(&m).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_rows_unchanged() {
        let m = Matrix::<f64>::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.6, 0.8]]).unwrap();
        let n = row_l2_normalize(&m).unwrap();
        assert!(n.max_abs_diff(&m).unwrap() < 1e-15);
    }

    #[test]
    fn normalize_zero_row_errors() {
        let m = Matrix::<f64>::from_rows(&[&[1.0, 1.0], &[0.0, 1e-13]]).unwrap();
        assert!(matches!(row_l2_normalize(&m), Err(TensorError::DegenerateRow { row: 1, .. })));
    }

    #[test]
    fn xent_uniform_logits() {
        let (loss, _) = softmax_cross_entropy(&[0.3, 0.3], &[1.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn xent_closed_form() {
        // -log(e / (e + 1)) = ln(1 + e^-1)
        let (loss, _) = softmax_cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((loss - (1.0f64 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn xent_gradient_zero_at_softmax_target() {
        let logits = [0.2, -1.0, 0.7];
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
        let (_, g) = softmax_cross_entropy(&logits, &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn xent_rejects_non_distribution() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 0.0], &[0.5, 0.6]),
            Err(TensorError::NotADistribution { .. })
        ));
        assert!(softmax_cross_entropy(&[0.0, 0.0], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn fd_quadratic() {
        let x = Matrix::<f64>::from_rows(&[&[0.3, -1.2], &[2.0, 0.7]]).unwrap();
        let err = finite_difference_check(|m| (m.frobenius_sq(), m.scale(2.0)), &x, 1e-5);
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn fd_constant() {
        let x = Matrix::<f64>::from_rows(&[&[0.3, -1.2]]).unwrap();
        let err = finite_difference_check(|m| (4.2, Matrix::zeros(m.rows(), m.cols())), &x, 1e-5);
        assert_eq!(err, 0.0);
    }
}
