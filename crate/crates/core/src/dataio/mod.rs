//! Paired datasets, splits, synthetic data with known noise, and float-map files.

mod floatmap;
mod loader;
mod split;
mod synthetic;

pub use floatmap::{export_float_map, import_float_map, preview_image, preview_path, colormap};
pub use loader::{
    image_to_array, load_image, load_paired_dir, save_image, LoadIssue, PairedDataset, PairedLayout,
};
pub use split::{split, Split};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with, inverse_target_transform, noise_variance_field,
    noisy_target, target_transform, SyntheticConfig, SyntheticTruth,
};

use ndarray::Array3;

use crate::error::{Error, Result};

/// One source/target pair, both `H x W x C` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x_a: Array3<f64>,
    pub x_b: Array3<f64>,
    pub id: String,
}

impl PairedSample {
    pub fn new(x_a: Array3<f64>, x_b: Array3<f64>, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if x_a.dim().0 != x_b.dim().0 || x_a.dim().1 != x_b.dim().1 {
            return Err(Error::dim(format!(
                "{id}: source {:?} vs target {:?}",
                x_a.dim(),
                x_b.dim()
            )));
        }
        if x_a.iter().chain(x_b.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!("{id}: pixel values outside [0, 1]")));
        }
        Ok(Self { x_a, x_b, id })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.x_a.dim().0, self.x_a.dim().1)
    }
}
