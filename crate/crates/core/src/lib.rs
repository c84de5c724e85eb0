//! Toolkit for measuring subtle semantic shifts between paired financial
//! narratives.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the pipeline
//! stages use the `f64` aliases exported here.

pub mod annotate;
pub mod augment;
pub mod corpus;
pub mod evaluate;
pub mod jsonl;
pub mod linalg;
pub mod matching;
pub mod metrics;
pub mod provider;
pub mod synthetic;
pub mod trainer;
mod scalar;

pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type EmbeddingVector = metrics::EmbeddingVector<f64>;
pub type EmbeddingMatrix = metrics::EmbeddingMatrix<f64>;
pub type Assignment = matching::Assignment<f64>;
