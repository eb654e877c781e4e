//! Two-layer graph-convolutional encoder with L2-normalized outputs:
//! `Z = normalize_rows(Â · relu(Â · X · W1) · W2)`.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::NormalizedAdjacency;
use crate::scalar::Scalar;
use crate::tensor::{read_matrix_bin, write_matrix_bin, Matrix, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden_dim: 128, embed_dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S> {
    pub w1: Matrix<S>,
    pub w2: Matrix<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ParamDims {
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }

    /// Writes `params.json` (dimensions) and `params.bin` (`w1` then `w2`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dims = ParamDims { input_dim: self.input_dim(), hidden_dim: self.hidden_dim(), embed_dim: self.embed_dim() };
        let json = serde_json::to_vec_pretty(&dims).expect("dims serialize");
        let p = dir.join("params.json");
        write_atomic(&p, &json).map_err(|e| Error::io(&p, e))?;
        let mut buf = Vec::new();
        write_matrix_bin(&self.w1, &mut buf).expect("vec write");
        write_matrix_bin(&self.w2, &mut buf).expect("vec write");
        let p = dir.join("params.bin");
        write_atomic(&p, &buf).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("params.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let dims: ParamDims = serde_json::from_str(&text).map_err(|e| Error::artifact(&p, e.to_string()))?;
        let p = dir.join("params.bin");
        let file = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        let mut r = BufReader::new(file);
        let w1: Matrix<S> = read_matrix_bin(&mut r).map_err(|e| Error::artifact(&p, e.to_string()))?;
        let w2: Matrix<S> = read_matrix_bin(&mut r).map_err(|e| Error::artifact(&p, e.to_string()))?;
        if w1.shape() != (dims.input_dim, dims.hidden_dim) || w2.shape() != (dims.hidden_dim, dims.embed_dim) {
            return Err(Error::artifact(&p, "weight shapes disagree with params.json"));
        }
        Ok(Self { w1, w2 })
    }
}

/// Glorot-uniform weights: entries i.i.d. in `±sqrt(6 / (fan_in + fan_out))`.
pub fn init_encoder<S: Scalar>(input_dim: usize, cfg: &EncoderConfig) -> Result<EncoderParams<S>> {
    if input_dim == 0 || cfg.hidden_dim == 0 || cfg.embed_dim == 0 {
        return Err(Error::InvalidArgument("encoder dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w1 = glorot(&mut rng, input_dim, cfg.hidden_dim);
    let w2 = glorot(&mut rng, cfg.hidden_dim, cfg.embed_dim);
    Ok(EncoderParams { w1, w2 })
}

pub(crate) fn glorot<S: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| S::lit(rng.random_range(-bound..=bound)))
}

/// Tape handles for the two weight matrices.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub w2: Var,
}

impl EncoderVars {
    pub fn trainable<'a, S: Scalar>(tape: &mut Tape<'a, S>, p: &EncoderParams<S>) -> Self {
        Self { w1: tape.var(p.w1.clone()), w2: tape.var(p.w2.clone()) }
    }

    pub fn frozen<'a, S: Scalar>(tape: &mut Tape<'a, S>, p: &EncoderParams<S>) -> Self {
        Self { w1: tape.constant(p.w1.clone()), w2: tape.constant(p.w2.clone()) }
    }
}

/// Records the encoder forward on `tape` and returns the unit-row
/// embedding variable.
pub fn encode_on_tape<'a, S: Scalar>(
    tape: &mut Tape<'a, S>,
    w: EncoderVars,
    adj: &'a NormalizedAdjacency<S>,
    x: Var,
) -> std::result::Result<Var, TensorError> {
    let xw = tape.matmul(x, w.w1)?;
    let h = tape.spmm(adj.csr(), xw)?;
    let h = tape.relu(h)?;
    let hw = tape.matmul(h, w.w2)?;
    let out = tape.spmm(adj.csr(), hw)?;
    tape.row_l2_normalize(out)
}

pub fn encode<S: Scalar>(p: &EncoderParams<S>, adj: &NormalizedAdjacency<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
    if x.cols() != p.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "feature width {} does not match encoder input {}",
            x.cols(),
            p.input_dim()
        )));
    }
    if x.rows() != adj.n() {
        return Err(Error::InvalidArgument(format!("{} feature rows for {} nodes", x.rows(), adj.n())));
    }
    let mut tape = Tape::new();
    let w = EncoderVars::frozen(&mut tape, p);
    let xv = tape.constant(x.clone());
    let z = encode_on_tape(&mut tape, w, adj, xv)?;
    Ok(tape.value(z).clone())
}
