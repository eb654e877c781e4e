//! Label-free graph condensation.
//!
//! A GCN encoder is trained against learnable prototypes with balanced
//! (Sinkhorn) pseudo-label assignments; each source graph is then condensed
//! to one synthetic node per prototype, and a fresh backbone is fitted to
//! the condensed sets before task heads are fine-tuned on a few clean labels.
//!
//! Numerical code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases. The experiment
//! harness works in `f64`.

pub mod condense;
pub mod downstream;
pub mod encoder;
pub mod error;
mod fsutil;
pub mod graph;
pub mod harness;
pub mod pseudo;
pub mod scalar;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = tensor::Matrix<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type PrototypeBank64 = pseudo::PrototypeBank<f64>;
pub type PrototypeBank32 = pseudo::PrototypeBank<f32>;
pub type CondensedGraph64 = condense::CondensedGraph<f64>;
pub type CondensedGraph32 = condense::CondensedGraph<f32>;
pub type HeadParams64 = downstream::HeadParams<f64>;
pub type HeadParams32 = downstream::HeadParams<f32>;
