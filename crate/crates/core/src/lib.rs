//! Tri-modal (image / text / metadata) cross-contrastive pre-training and
//! fine-tuning for fine-grained classification.
//!
//! All numeric code is generic over [`Scalar`]; the `*64` aliases below are
//! the test-mode instantiations and the `*32` aliases the fast mode.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod loss;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result, RowIssue};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Model64 = encoders::TriModalModel<f64>;
pub type Model32 = encoders::TriModalModel<f32>;
pub type Params64 = params::ParamStore<f64>;
pub type Params32 = params::ParamStore<f32>;
