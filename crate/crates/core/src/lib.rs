//! Structured convolutions.
//!
//! A structured `C×N×N` kernel is a linear combination of `c·n²` shifted
//! cuboids of ones. Convolving with it equals a 3D sum-pooling followed by a
//! much smaller `c×n×n` convolution. This crate implements the kernels, the
//! exact decomposition for convolution and fully-connected layers, the
//! structural-regularization training scheme that pushes ordinary weights
//! towards that form, and an integer cost model for the savings.

pub mod analyzer;
pub mod composite;
pub mod counting;
pub mod error;
pub mod structured;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ConvGeometry, Tensor};
