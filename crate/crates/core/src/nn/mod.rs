//! Small differentiable-computation core: tensors, a reverse-mode tape,
//! dense / LSTM / conv1d / ReLU layers and the Adam optimizer.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{backward, forward, Conv1d, Dense, Layer, LayerSpec, LstmLayer, Sequential};
pub use params::{AdamConfig, Checkpoint, ModelParams, ParamGrads, ParamId};
pub use tape::{Gradients, ScalarFn, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
