//! Adaptive input normalization for time-series classification.
//!
//! Implements a trainable normalization layer that shifts, scales, and gates
//! each input window based on its own summary statistics, together with the
//! baseline normalizers, the downstream classifiers (MLP / CNN / GRU), and
//! the training and evaluation machinery needed to compare them.

// Indexed loops are the house style in the numeric kernels: the [row*d + k]
// addressing stays visible instead of hiding behind iterator adapters.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod models;
pub mod normalize;
pub mod params;
pub mod synth;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
