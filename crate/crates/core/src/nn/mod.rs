//! Minimal dense computation engine: 2-D tensors, a define-by-run graph
//! with reverse-mode differentiation, Adam, and a binary checkpoint format.

pub mod checkpoint;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use graph::{CustomOp, Gradients, Graph, NodeId, Op, Reduction};
pub use optim::{glorot_uniform, AdamState, ParamStore};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("tensor length {actual} does not match shape ({expected} expected)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("non-finite value produced by node {node} at batch row {row}")]
    NonFinite { node: String, row: usize },
    #[error("input '{0}' is not bound")]
    MissingInput(String),
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("learning rate must be finite and non-negative, got {0}")]
    InvalidLearningRate(f32),
}
