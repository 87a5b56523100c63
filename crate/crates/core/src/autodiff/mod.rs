//! Minimal reverse-mode differentiation over dense row-major tensors.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Default guard for [`Tape::l2_normalize_rows`].
pub const NORMALIZE_EPS: f64 = 1e-12;
