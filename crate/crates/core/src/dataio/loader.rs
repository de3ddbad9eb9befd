use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::PairedSample;
use crate::error::{Error, Result};

/// Subdirectory names of a paired dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedLayout {
    pub source_dir: String,
    pub target_dir: String,
}

impl Default for PairedLayout {
    fn default() -> Self {
        Self { source_dir: "A".into(), target_dir: "B".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum LoadIssue {
    MissingTarget { name: String },
    MissingSource { name: String },
    SizeMismatch { name: String, source: (usize, usize), target: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub issues: Vec<LoadIssue>,
}

pub fn image_to_array(img: &DynamicImage) -> Array3<f64> {
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(j, k, c)| {
        f64::from(rgb.get_pixel(k as u32, j as u32)[c]).clamp(0.0, 1.0)
    })
}

pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(image_to_array(&img))
}

/// Writes an `H x W x C` array as an 8-bit PNG. One channel is written as gray,
/// three as RGB.
pub fn save_image(img: &Array3<f64>, path: &Path) -> Result<()> {
    let (h, w, c) = img.dim();
    if c != 1 && c != 3 {
        return Err(Error::Unsupported(format!("cannot write a {c}-channel image")));
    }
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let out = RgbImage::from_fn(w as u32, h as u32, |k, j| {
        let (j, k) = (j as usize, k as usize);
        if c == 1 {
            let g = to_u8(img[[j, k, 0]]);
            Rgb([g, g, g])
        } else {
            Rgb([to_u8(img[[j, k, 0]]), to_u8(img[[j, k, 1]]), to_u8(img[[j, k, 2]])])
        }
    });
    out.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn list_files(dir: &Path) -> Result<BTreeMap<Vec<u8>, (OsString, PathBuf)>> {
    let mut files = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(files);
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            let name = entry.file_name();
            files.insert(name.as_encoded_bytes().to_vec(), (name, entry.path()));
        }
    }
    Ok(files)
}

/// Loads `root/A/*` and `root/B/*` (by default) matched on identical file
/// names, ordered by byte-wise file name.
///
/// Files without a counterpart and pairs whose sizes differ are listed in
/// `issues` and skipped. An unreadable image is an error.
pub fn load_paired_dir(root: &Path, layout: &PairedLayout) -> Result<PairedDataset> {
    let sources = list_files(&root.join(&layout.source_dir))?;
    let targets = list_files(&root.join(&layout.target_dir))?;
    let mut samples = Vec::new();
    let mut issues = Vec::new();

    for (key, (name, source_path)) in &sources {
        let name = name.to_string_lossy().into_owned();
        let Some((_, target_path)) = targets.get(key) else {
            issues.push(LoadIssue::MissingTarget { name });
            continue;
        };
        let x_a = load_image(source_path)?;
        let x_b = load_image(target_path)?;
        let (sa, sb) = ((x_a.dim().0, x_a.dim().1), (x_b.dim().0, x_b.dim().1));
        if sa != sb {
            issues.push(LoadIssue::SizeMismatch { name, source: sa, target: sb });
            continue;
        }
        samples.push(PairedSample::new(x_a, x_b, name)?);
    }
    for (key, (name, _)) in &targets {
        if !sources.contains_key(key) {
            issues.push(LoadIssue::MissingSource { name: name.to_string_lossy().into_owned() });
        }
    }
    Ok(PairedDataset { samples, issues })
}
