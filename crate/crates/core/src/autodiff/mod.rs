//! Minimal reverse-mode differentiation and the neural blocks the model is built from.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod nn;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use nn::{gumbel_softmax, sample_gumbel, Mlp, MlpVars, BN_EPS, BN_MOMENTUM};
pub use tape::{relaxed_sample, BatchStats, Gradients, Tape, Var};
pub use tensor::{argmax, softmax_rows, Tensor};
