//! Dense tensors, a recording tape for reverse-mode gradients, and Adam.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{masked_softmax, masked_softmax_tensor, Tensor, TensorError};
