//! Deterministic tensor math with reverse-mode differentiation.

pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod rng;
pub mod tensor;

pub use gradcheck::{finite_difference_gradients, grad_check, max_relative_error, reverse_gradients};
pub use graph::{softmax_slice, Activation, GradSink, Graph, Var};
pub use lstm::{bilstm_encode, bilstm_encode_multi, lstm_cell, lstm_sequence, lstm_sequence_multi, LstmParams, LstmVars};
pub use rng::{fnv1a64, RngState};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimMismatch { op: String, detail: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("empty input to {0}")]
    EmptyInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
