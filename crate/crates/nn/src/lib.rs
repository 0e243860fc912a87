//! A small reverse-mode differentiation engine for 2-D convolutional models.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record in reverse and accumulates gradients. The engine is
//! generic over [`Scalar`] so the same model code runs in `f32` for training
//! and in `f64` for finite-difference gradient checks.

pub mod adam;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use error::{NnError, Result};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
