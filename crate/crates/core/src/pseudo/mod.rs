//! Label-free pseudo-label learning: unit-norm prototypes, balanced
//! entropic assignment of nodes to prototypes, and a swapped-view
//! prediction loss that trains the encoder and prototypes together.

mod sinkhorn;
mod swap;
mod train;

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::{read_matrix_tsv, row_l2_normalize, write_matrix_tsv, Matrix};

pub use sinkhorn::{round_assignment, sinkhorn_assign};
pub use swap::{normalize_bank, swapped_loss, SwappedLoss};
pub use train::{train_pseudo_labels, PseudoLabelConfig};

const UNIT_TOL: f64 = 1e-9;

/// `K` prototype vectors stored as unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<S> {
    protos: Matrix<S>,
}

impl<S: Scalar> PrototypeBank<S> {
    /// Wraps rows that are already unit norm (within `1e-9`).
    pub fn new(protos: Matrix<S>) -> Result<Self> {
        for (k, n) in protos.row_norms().into_iter().enumerate() {
            if (n.as_f64() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidArgument(format!("prototype {k} has norm {n}, expected 1")));
            }
        }
        Ok(Self { protos })
    }

    /// Normalizes arbitrary non-zero rows onto the unit sphere.
    pub fn from_unnormalized(rows: &Matrix<S>) -> Result<Self> {
        Ok(Self { protos: row_l2_normalize(rows)? })
    }

    /// `k` directions drawn uniformly from the unit sphere in `dim` dimensions.
    pub fn random(k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Matrix::from_fn(k, dim, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            S::lit(v)
        });
        Self::from_unnormalized(&raw)
    }

    pub fn k(&self) -> usize {
        self.protos.rows()
    }

    pub fn dim(&self) -> usize {
        self.protos.cols()
    }

    pub fn protos(&self) -> &Matrix<S> {
        &self.protos
    }

    pub fn into_matrix(self) -> Matrix<S> {
        self.protos
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_matrix_tsv(&self.protos, &mut buf).expect("vec write");
        write_atomic(path, &buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let m = read_matrix_tsv(BufReader::new(file)).map_err(|e| Error::artifact(path, e.to_string()))?;
        Self::new(m).map_err(|e| Error::artifact(path, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentMode {
    /// Transport plan with row sums `1/B` and column sums `1/K`.
    Soft,
    /// One-hot rows.
    Hard,
}

/// `B x K` matrix linking nodes (rows) to prototypes (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<S> {
    matrix: Matrix<S>,
    mode: AssignmentMode,
}

impl<S: Scalar> Assignment<S> {
    pub fn soft(matrix: Matrix<S>) -> Self {
        Self { matrix, mode: AssignmentMode::Soft }
    }

    /// One-hot assignment from per-row prototype indices.
    pub fn from_indices(idx: &[usize], k: usize) -> Result<Self> {
        let mut m = Matrix::zeros(idx.len(), k);
        for (r, &c) in idx.iter().enumerate() {
            if c >= k {
                return Err(Error::InvalidArgument(format!("row {r} assigned to prototype {c} >= {k}")));
            }
            m.set(r, c, S::one());
        }
        Ok(Self { matrix: m, mode: AssignmentMode::Hard })
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn k(&self) -> usize {
        self.matrix.cols()
    }

    /// Per-row prototype index (argmax, ties to the lowest index).
    pub fn indices(&self) -> Vec<usize> {
        self.matrix.row_argmax()
    }

    /// Number of rows assigned to each prototype (hard mode semantics).
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k()];
        for i in self.indices() {
            c[i] += 1;
        }
        c
    }

    /// Writes one prototype index per line.
    pub fn save_indices(&self, path: &Path) -> Result<()> {
        let text: String = self.indices().iter().map(|i| format!("{i}\n")).collect();
        write_atomic(path, text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_indices(path: &Path, k: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut idx = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim();
            if tok.is_empty() {
                continue;
            }
            let v: usize = tok
                .parse()
                .map_err(|_| Error::artifact(path, format!("line {}: bad prototype index {tok:?}", i + 1)))?;
            idx.push(v);
        }
        Self::from_indices(&idx, k).map_err(|e| Error::artifact(path, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropy weight.
    pub epsilon: f64,
    /// Number of row/column scaling sweeps.
    pub iters: usize,
    /// Nodes per assignment batch; `None` uses the whole graph when it has
    /// at most 5000 nodes.
    pub batch_size: Option<usize>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, iters: 100, batch_size: None }
    }
}

/// Output of pseudo-label training.
#[derive(Debug, Clone)]
pub struct PseudoLabelResult<S> {
    pub encoder: EncoderParams<S>,
    pub bank: PrototypeBank<S>,
    /// Hard full-graph assignment, every prototype used at least once.
    pub q_full: Assignment<S>,
    /// Summed two-way swapped loss per epoch, measured before each update.
    pub loss_history: Vec<f64>,
}

impl<S: Scalar> PseudoLabelResult<S> {
    /// Writes `prototypes.tsv`, `assignments.tsv` and the encoder params.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.bank.save_tsv(&dir.join("prototypes.tsv"))?;
        self.q_full.save_indices(&dir.join("assignments.tsv"))?;
        self.encoder.save(dir)?;
        let hist = serde_json::to_vec(&self.loss_history).expect("floats serialize");
        let p = dir.join("loss_history.json");
        write_atomic(&p, &hist).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bank = PrototypeBank::load_tsv(&dir.join("prototypes.tsv"))?;
        let q_full = Assignment::load_indices(&dir.join("assignments.tsv"), bank.k())?;
        let encoder = EncoderParams::load(dir)?;
        let p = dir.join("loss_history.json");
        let loss_history = match fs::read(&p) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::artifact(&p, e.to_string()))?,
            Err(_) => Vec::new(),
        };
        Ok(Self { encoder, bank, q_full, loss_history })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_bank_is_unit() {
        let b: PrototypeBank<f64> = PrototypeBank::random(5, 7, 2).unwrap();
        for n in b.protos().row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_unit_rows_rejected() {
        let m = Matrix::<f64>::from_rows(&[&[2.0, 0.0]]).unwrap();
        assert!(PrototypeBank::new(m).is_err());
    }

    #[test]
    fn index_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a: Assignment<f64> = Assignment::from_indices(&[2, 0, 1, 1], 3).unwrap();
        let p = dir.path().join("a.tsv");
        a.save_indices(&p).unwrap();
        assert_eq!(Assignment::<f64>::load_indices(&p, 3).unwrap(), a);
        assert_eq!(a.counts(), vec![1, 2, 1]);
    }
}
