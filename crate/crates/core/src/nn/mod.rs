//! Minimal CPU neural-network stack with explicit forward/backward passes.
//!
//! Layers operate on single samples (no batch dimension); batches are
//! processed by running samples in parallel and summing per-sample gradients
//! in index order, which keeps results identical for any worker count.
//! Convolutions lower to im2col + GEMM.

mod batch;
mod blob;
mod layer;
mod network;
mod optim;
mod presets;

pub use batch::{batch_backward, batch_forward, batch_forward_tape};
pub use blob::{read_weight_blob, write_weight_blob};
pub use layer::{Layer, LayerSpec, ShapeInfo};
pub use network::{Gradients, Network, Tape};
pub use optim::{Adam, Sgd};
pub use presets::{
    classification_head, encoder_spec, projection_head_spec, regression_head, EncoderPreset,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("layer spec invalid: {0}")]
    BadSpec(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("weight blob error: {0}")]
    Blob(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
