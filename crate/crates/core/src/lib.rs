//! Building blocks for uncertainty-aware paired image translation.
//!
//! Images are `H x W x C` arrays of `f64` in `[0, 1]`; per-pixel maps are
//! `H x W`. Nothing here depends on a tensor framework: these are the reference
//! implementations the training code is checked against.

pub mod corruptions;
pub mod dataio;
pub mod error;
pub mod gnd;
pub mod metrics;
pub mod regularizers;

pub use error::{Error, Result};

/// `H x W x C` image with values in `[0, 1]`.
pub type ImageMap = ndarray::Array3<f64>;
