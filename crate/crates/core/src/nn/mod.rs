//! Dense-tensor math with reverse-mode differentiation.

pub mod tensor;

pub use tensor::{Scalar, Tensor};
