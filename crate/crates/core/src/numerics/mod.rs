//! Dense tensors, a reverse-mode tape, and the optimiser used in training.

mod adam;
pub mod conv;
mod gradcheck;
mod gru;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, Adam};
pub use conv::Conv2dGeometry;
pub use gradcheck::{analytic_gradient, grad_check, max_relative_error, numeric_gradient, numeric_gradient_5pt};
pub use gru::{gru_cell, GruVars};
pub use tape::{bce_value, sigmoid, Activation, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;
