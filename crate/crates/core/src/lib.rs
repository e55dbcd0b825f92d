//! Query-based temporal decoder for long-term action quality assessment.
//!
//! Clip features of a long video form the memory of a small transformer
//! decoder whose learnable queries each come to represent one clip. An
//! attention loss keeps the self-attention and cross-attention similarity
//! maps aligned so the decoder cannot bypass self-attention, and a
//! weight-score head turns each query into an interpretable
//! `(weight, score)` pair whose weighted sum is the predicted score.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the element type to `f64`.

pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod export;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type Model = model::Model<tensor::Tensor<f64>>;
pub type QueryBank = decoder::QueryBank<tensor::Tensor<f64>>;
pub type ClipAssessment = head::ClipAssessment<f64>;
