//! Conversions between `H x W x C` ndarray images and `B x C x H x W` tensors.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub fn images_to_tensor(images: &[&Array3<f64>], dtype: DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Dimension("empty batch".into()));
    };
    let (h, w, c) = first.dim();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dim() != (h, w, c) {
            return Err(Error::Dimension(format!("batch mixes {:?} and {:?}", (h, w, c), img.dim())));
        }
        for ch in 0..c {
            for j in 0..h {
                for k in 0..w {
                    data.push(img[[j, k, ch]]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Array3<f64>>> {
    let (b, c, h, w) = t.dims4()?;
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok((0..b)
        .map(|n| Array3::from_shape_fn((h, w, c), |(j, k, ch)| flat[((n * c + ch) * h + j) * w + k]))
        .collect())
}

/// Single-channel `B x 1 x H x W` tensor to `B` maps.
pub fn tensor_to_maps(t: &Tensor) -> Result<Vec<Array2<f64>>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::Dimension(format!("expected one channel, got {c}")));
    }
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok((0..b)
        .map(|n| Array2::from_shape_fn((h, w), |(j, k)| flat[(n * h + j) * w + k]))
        .collect())
}

pub fn maps_to_tensor(maps: &[&Array2<f64>], dtype: DType) -> Result<Tensor> {
    let Some(first) = maps.first() else {
        return Err(Error::Dimension("empty batch".into()));
    };
    let (h, w) = first.dim();
    if maps.iter().any(|m| m.dim() != (h, w)) {
        return Err(Error::Dimension("maps differ in size".into()));
    }
    let data: Vec<f64> = maps.iter().flat_map(|m| m.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (maps.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}
