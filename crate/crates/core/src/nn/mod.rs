//! A small neural-network engine: dense, activation, GRU, dropout and
//! softmax cross-entropy layers with exact gradients over a single flat
//! parameter vector, plus Adam and a checkpoint format.

mod adam;
mod checkpoint;
mod gru;
mod layers;
mod model;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gru::{Gru, GruCache, SeqBatch};
pub use layers::{dropout, relu, relu_backward, softmax, softmax_xent, Activation, Dense};
pub use model::{build_model, Batch, Model, ModelKind, ModelSpec, CLASSES};
pub use tensor::{axpy, dot, matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc, Real, Tensor};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: expected {expected}, found {found}")]
    Shape {
        layer: String,
        expected: String,
        found: String,
    },
    #[error("non-finite {what} at index {index}: {value}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// SHA-256 over the little-endian bytes of a parameter vector.
pub fn param_digest(params: &[f32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

pub fn digest_hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
