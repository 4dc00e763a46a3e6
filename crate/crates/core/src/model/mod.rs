//! Transformer encoder with a multi-label classification head.
//!
//! Tokens and learned positions are embedded, passed through post-norm
//! encoder blocks (multi-head self-attention, then a GELU feed-forward
//! network), and the first-token vector feeds a ReLU pre-classifier and a
//! linear layer producing one raw logit per label.

mod attention;
mod encoder;
mod params;
mod tensor;

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

pub use attention::{attention_weights, multi_head, project_qkv, scaled_dot_attention, MASK_BIAS};
pub use encoder::{
    backward, encoder_forward, encoder_forward_untrimmed, forward_cached, loss_and_gradients, Example,
    ForwardCache,
};
pub use params::{LayerParams, ModelParams, INIT_STD};
pub use tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("query row {row} has every key position masked")]
    DegenerateMask { row: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub num_labels: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Laptop-sized defaults.
    pub fn desk(vocab_size: usize, num_labels: usize) -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            n_layers: 2,
            d_ff: 256,
            vocab_size,
            max_positions: 512,
            num_labels,
            dropout_rate: 0.1,
        }
    }

    /// Head width `d_k = d_v = d_model / heads`.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return fail(format!(
                "d_model ({}), heads ({}) and d_ff ({}) must be positive",
                self.d_model, self.heads, self.d_ff
            ));
        }
        if self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.num_labels == 0 {
            return fail(format!(
                "vocab_size ({}), max_positions ({}) and num_labels ({}) must be positive",
                self.vocab_size, self.max_positions, self.num_labels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}
