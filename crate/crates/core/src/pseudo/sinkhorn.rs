use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

use super::{Assignment, AssignmentMode, PrototypeBank, SinkhornConfig};

/// Balanced entropic assignment of `B` embeddings to `K` prototypes.
///
/// Starts from `exp(Z Ỹᵀ / ε)` and alternates column scaling (sums `1/K`)
/// and row scaling (sums `1/B`) for `cfg.iters` sweeps. The result is the
/// transport plan maximizing `Tr(Qᵀ Ỹᵀ Z) + ε H(Q)` under those marginals.
pub fn sinkhorn_assign<S: Scalar>(z: &Matrix<S>, bank: &PrototypeBank<S>, cfg: &SinkhornConfig) -> Result<Assignment<S>> {
    if !(cfg.epsilon > 0.0) || cfg.iters == 0 {
        return Err(Error::Sinkhorn(format!("need epsilon > 0 and iters >= 1, got {} / {}", cfg.epsilon, cfg.iters)));
    }
    if z.cols() != bank.dim() {
        return Err(Error::InvalidArgument(format!(
            "embedding width {} does not match prototype width {}",
            z.cols(),
            bank.dim()
        )));
    }
    let (b, k) = (z.rows(), bank.k());
    if b == 0 || k == 0 {
        return Err(Error::Sinkhorn("empty batch or prototype bank".into()));
    }
    if b < k {
        log::warn!("sinkhorn batch of {b} rows is smaller than {k} prototypes");
    }

    let inv_eps = S::lit(1.0 / cfg.epsilon);
    let scores = z.matmul(&bank.protos().transpose())?;
    let mut q = scores.map(|s| (s * inv_eps).exp());
    if q.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Sinkhorn(format!(
            "exp(score / epsilon) overflowed at epsilon = {}; use a larger epsilon",
            cfg.epsilon
        )));
    }

    let col_target = S::one() / S::from_usize(k).unwrap();
    let row_target = S::one() / S::from_usize(b).unwrap();
    for _ in 0..cfg.iters {
        let col = q.col_sums();
        if col.iter().any(|&c| !(c > S::zero()) || !c.is_finite()) {
            return Err(Error::Sinkhorn(format!("column mass vanished at epsilon = {}; use a larger epsilon", cfg.epsilon)));
        }
        let col_scale: Vec<S> = col.iter().map(|&c| col_target / c).collect();
        for r in 0..b {
            for (v, &s) in q.row_mut(r).iter_mut().zip(&col_scale) {
                *v *= s;
            }
        }
        for r in 0..b {
            let row = q.row_mut(r);
            let sum = row.iter().fold(S::zero(), |a, &v| a + v);
            if !(sum > S::zero()) || !sum.is_finite() {
                return Err(Error::Sinkhorn(format!("row mass vanished at epsilon = {}; use a larger epsilon", cfg.epsilon)));
            }
            let s = row_target / sum;
            for v in row.iter_mut() {
                *v *= s;
            }
        }
    }
    Ok(Assignment::soft(q))
}

/// One-hot rounding of each row to its largest entry; ties go to the
/// lowest prototype index.
pub fn round_assignment<S: Scalar>(q: &Assignment<S>) -> Assignment<S> {
    if q.mode() == AssignmentMode::Hard {
        return q.clone();
    }
    Assignment::from_indices(&q.indices(), q.k()).expect("argmax within k")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rows: &[&[f64]]) -> Matrix<f64> {
        crate::tensor::row_l2_normalize(&Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn cfg(epsilon: f64, iters: usize) -> SinkhornConfig {
        SinkhornConfig { epsilon, iters, batch_size: None }
    }

    /// Log-domain Sinkhorn with its own loop, run far past convergence.
    fn long_run_oracle(scores: &Matrix<f64>, eps: f64, sweeps: usize) -> Matrix<f64> {
        let (b, k) = scores.shape();
        let (log_r, log_c) = (-(b as f64).ln(), -(k as f64).ln());
        let mut f = vec![0.0; b];
        let mut g = vec![0.0; k];
        let lse = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        for _ in 0..sweeps {
            for j in 0..k {
                g[j] = log_c - lse(&mut (0..b).map(|i| scores.get(i, j) / eps + f[i]));
            }
            for i in 0..b {
                f[i] = log_r - lse(&mut (0..k).map(|j| scores.get(i, j) / eps + g[j]));
            }
        }
        Matrix::from_fn(b, k, |i, j| (scores.get(i, j) / eps + f[i] + g[j]).exp())
    }

    #[test]
    fn single_prototype_column_is_uniform() {
        let z = unit(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let bank = PrototypeBank::new(unit(&[&[0.3, 0.7]])).unwrap();
        let q = sinkhorn_assign(&z, &bank, &cfg(0.05, 10)).unwrap();
        for r in 0..3 {
            assert!((q.matrix().get(r, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_scores_give_uniform_plan() {
        let z = unit(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let bank = PrototypeBank::new(unit(&[&[0.0, 1.0], &[0.0, -1.0]])).unwrap();
        let q = sinkhorn_assign(&z, &bank, &cfg(0.05, 5)).unwrap();
        assert!(q.matrix().data().iter().all(|&v| (v - 1.0 / 8.0).abs() < 1e-15));
    }

    #[test]
    fn matches_long_run_oracle_on_block_scores() {
        // two pairs of nodes, each pair near one prototype
        let z = unit(&[&[1.0, 0.1], &[0.9, 0.2], &[0.1, 1.0], &[0.3, 0.8]]);
        let bank = PrototypeBank::new(unit(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let q = sinkhorn_assign(&z, &bank, &cfg(0.05, 100)).unwrap();
        let scores = z.matmul(&bank.protos().transpose()).unwrap();
        let reference = long_run_oracle(&scores, 0.05, 10_000);
        assert!(q.matrix().max_abs_diff(&reference).unwrap() <= 1e-6);
    }

    #[test]
    fn tiny_epsilon_overflow_is_reported() {
        let z = unit(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let bank = PrototypeBank::new(unit(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let err = sinkhorn_assign(&z, &bank, &cfg(1e-4, 10)).unwrap_err();
        assert!(err.to_string().contains("larger epsilon"), "{err}");
    }

    #[test]
    fn rounding() {
        let q = Assignment::soft(Matrix::<f64>::from_rows(&[&[0.7, 0.3], &[0.25, 0.25], &[0.1, 0.4]]).unwrap());
        let h = round_assignment(&q);
        assert_eq!(h.indices(), vec![0, 0, 1]);
        assert_eq!(h.mode(), AssignmentMode::Hard);
        assert_eq!(round_assignment(&h), h);
    }
}
