//! Desk-scale pipeline for query-as-context pre-training of dense passage
//! retrievers: corpus chunking and pair construction, MLM / contrastive /
//! contextual-decoding objectives, BM25 and exact dense retrieval with
//! two-stage hard-negative mining, and TREC-style evaluation.
//!
//! The numeric core is generic over the scalar type: training defaults to
//! `f32`, gradient-check suites run in `f64`.

pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod querygen;
pub mod sparse;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default training precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double precision, used by the gradient-check suites.
pub type Tensor64 = tensor::Tensor<f64>;
