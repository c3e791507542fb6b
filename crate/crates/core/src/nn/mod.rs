//! A small GPT-style decoder with exact gradients, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod infer;
pub mod model;
pub mod params;
pub mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use infer::Session;
pub use model::{backward, batch_loss, forward, forward_batch, loss_and_grad, sequence_loss, Activations, Batch};
pub use params::{ParamGroup, ParamLayout, Params, TransformerConfig};
pub use scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of {len} tokens exceeds context length {ctx_len}")]
    ContextOverflow { len: usize, ctx_len: usize },
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
}
