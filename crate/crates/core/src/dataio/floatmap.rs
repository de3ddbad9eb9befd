//! Float-map files: a one-line JSON header `{"h":H,"w":W,"dtype":"f32"}`, a
//! newline, then `H * W` little-endian `f32` values in row-major order.
//!
//! Every export also writes an 8-bit preview PNG next to the map, colored with
//! a viridis ramp after min-max normalization (a constant map renders as the
//! ramp's first color).

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    h: usize,
    w: usize,
    dtype: String,
}

/// Viridis sampled at nine evenly spaced stops.
const RAMP: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Color at `t` in `[0, 1]` (clamped).
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let frac = pos - i as f64;
    std::array::from_fn(|c| {
        let (a, b) = (f64::from(RAMP[i][c]), f64::from(RAMP[i + 1][c]));
        (a + (b - a) * frac).round() as u8
    })
}

pub fn preview_image(map: &Array2<f32>) -> RgbImage {
    let (h, w) = map.dim();
    let finite = map.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f32::MAX, f32::MIN), |(a, b), v| (a.min(v), b.max(v)));
    let span = f64::from(hi) - f64::from(lo);
    RgbImage::from_fn(w as u32, h as u32, |k, j| {
        let v = f64::from(map[[j as usize, k as usize]]);
        let t = if span > 0.0 { (v - f64::from(lo)) / span } else { 0.0 };
        Rgb(colormap(t))
    })
}

/// Where the preview for a map file is written.
pub fn preview_path(path: &Path) -> PathBuf {
    let candidate = path.with_extension("png");
    if candidate == path {
        path.with_extension("preview.png")
    } else {
        candidate
    }
}

pub fn export_float_map(map: &Array2<f32>, path: &Path) -> Result<()> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("float map contains non-finite values"));
    }
    let (h, w) = map.dim();
    let header = serde_json::to_string(&Header { h, w, dtype: "f32".into() }).expect("header serializes");
    let mut bytes = Vec::with_capacity(header.len() + 1 + 4 * h * w);
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    for v in map.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let preview = preview_path(path);
    preview_image(map)
        .save(&preview)
        .map_err(|source| Error::Image { path: preview, source })
}

pub fn import_float_map(path: &Path) -> Result<Array2<f32>> {
    let bytes = fs::read(path)?;
    let newline = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| Error::Format {
        offset: bytes.len(),
        message: "header line is not terminated".into(),
    })?;
    let header: Header = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format {
        offset: e.column().saturating_sub(1),
        message: format!("bad header: {e}"),
    })?;
    if header.dtype != "f32" {
        return Err(Error::Format { offset: 0, message: format!("unsupported dtype {:?}", header.dtype) });
    }
    let payload = &bytes[newline + 1..];
    let expected = header.h.checked_mul(header.w).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(Error::Format {
            offset: newline + 1,
            message: format!(
                "payload has {} bytes, header {}x{} implies {}",
                payload.len(),
                header.h,
                header.w,
                expected.map_or("overflow".to_string(), |n| n.to_string())
            ),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((header.h, header.w), values).expect("length checked"))
}
