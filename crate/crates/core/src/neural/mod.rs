//! Tensor, reverse-mode differentiation and transformer encoder substrate.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use graph::{argmax, normalize_rows, Backprop, Graph, Var, LAYER_NORM_EPS};
pub use layers::{
    encoder_block, positional_encoding, self_attention, Attention, AttentionParams, Encoder, EncoderBlockParams,
    EncoderConfig, LayerNormParams, Linear,
};
pub use optim::{Adam, LinearSchedule};
pub use params::{Checkpoint, Gradients, NamedTensor, ParamId, ParamStore, CHECKPOINT_FORMAT_VERSION};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
