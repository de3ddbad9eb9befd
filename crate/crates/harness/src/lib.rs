//! Uncertainty-aware paired image translation: networks, objectives, training
//! and evaluation protocols, diagnostics and result tables.

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod net;
pub mod objectives;
pub mod report;
pub mod schedule;
pub mod special;
pub mod tensors;
pub mod train;

pub use error::{Error, Result};
