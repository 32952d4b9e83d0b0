//! Dense tensors, reverse-mode automatic differentiation, the Adam
//! optimizer with a cosine schedule, and labeled deterministic RNG streams.

mod adam;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, cosine_lr, AdamState};
pub use ops::*;
pub use rng::{DrawKind, RngStream};
pub use tensor::{backward, no_grad, Element, Tensor};
