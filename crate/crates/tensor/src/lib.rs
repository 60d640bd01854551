//! Minimal dense tensor math with tape-based reverse-mode autodiff.
//!
//! The op set is exactly what a pair-of-encoders link predictor needs:
//! matrix products, row-wise normalization, fused multi-head attention,
//! gathers for embedding lookup, inverted dropout and a label-smoothed
//! cross entropy. Everything is generic over [`Scalar`] so the same model
//! code runs in `f32` for training and `f64` for gradient checks.

mod error;
mod optim;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{clip_global_norm, Adam, AdamConfig, Coupled, Decoupled, WeightDecay};
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
