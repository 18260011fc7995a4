//! Weekly fire-risk forecasting with a dynamic auto-encoder.
//!
//! A recurrent state is fitted to predict the next noisy observation grid,
//! and a second decoder reads that state to predict fire maps `T` weeks
//! ahead. The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod data;
pub mod error;
pub mod eval;
pub mod frames;
pub mod model;
pub mod numerics;
pub mod replay;
pub mod training;
mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type HiddenState32 = frames::HiddenState<f32>;
pub type HiddenState64 = frames::HiddenState<f64>;
