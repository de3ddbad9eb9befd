//! Reconstruction quality metrics on `H x W x C` images in `[0, 1]`.
//!
//! RRMSE is `||x_hat - x||_2 / ||x||_2` over all elements. SSIM uses an
//! 11-tap Gaussian window with sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, averages the
//! local map over fully-contained windows and then over channels.

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(x: &ArrayView3<f64>, y: &ArrayView3<f64>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::dim(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.is_empty() {
        return Err(Error::dim("empty image"));
    }
    Ok(())
}

pub fn mse(x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64> {
    same_shape(&x, &x_hat)?;
    let sum: f64 = x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// PSNR in dB. Identical inputs give `f64::INFINITY`.
pub fn psnr(x: ArrayView3<f64>, x_hat: ArrayView3<f64>, peak: f64) -> Result<f64> {
    let err = mse(x, x_hat)?;
    Ok(psnr_from_mse(err, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn rrmse(x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64> {
    same_shape(&x, &x_hat)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::domain("reference image has zero norm"));
    }
    let diff = x.iter().zip(x_hat.iter()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

fn gaussian_window() -> Array1<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w = Array1::from_shape_fn(SSIM_WINDOW, |i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s = w.sum();
    w / s
}

/// Separable Gaussian filter keeping only fully-contained windows.
fn filter_valid(img: &Array2<f64>, kernel: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = kernel.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows = Array2::from_shape_fn((oh, w), |(j, k)| (0..n).map(|t| kernel[t] * img[[j + t, k]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(j, k)| (0..n).map(|t| kernel[t] * rows[[j, k + t]]).sum::<f64>())
}

fn ssim_channel(x: ArrayView2<f64>, y: ArrayView2<f64>, kernel: &Array1<f64>) -> f64 {
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let x = x.to_owned();
    let y = y.to_owned();
    let mu_x = filter_valid(&x, kernel);
    let mu_y = filter_valid(&y, kernel);
    let xx = filter_valid(&(&x * &x), kernel);
    let yy = filter_valid(&(&y * &y), kernel);
    let xy = filter_valid(&(&x * &y), kernel);
    let mut acc = 0.0;
    for (((mx, my), (sxx, syy)), sxy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter().zip(yy.iter()))
        .zip(xy.iter())
    {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    acc / mu_x.len() as f64
}

pub fn ssim(x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64> {
    same_shape(&x, &x_hat)?;
    let (h, w, c) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let kernel = gaussian_window();
    let total: f64 = (0..c)
        .map(|ch| ssim_channel(x.index_axis(Axis(2), ch), x_hat.index_axis(Axis(2), ch), &kernel))
        .sum();
    Ok((total / c as f64).clamp(-1.0, 1.0))
}

/// A perceptual distance provider such as a pretrained LPIPS network.
pub trait PerceptualBackend {
    fn name(&self) -> &str;
    fn distance(&self, x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64>;
}

/// Perceptual distance through the registered backend; `None` when no backend
/// is registered.
pub fn perceptual_distance(
    x: ArrayView3<f64>,
    x_hat: ArrayView3<f64>,
    backend: Option<&dyn PerceptualBackend>,
) -> Result<Option<f64>> {
    match backend {
        None => Ok(None),
        Some(b) => {
            same_shape(&x, &x_hat)?;
            b.distance(x, x_hat).map(Some)
        }
    }
}

/// Non-learned stand-in backend: mean squared difference of intensity and
/// finite-difference gradient features, averaged over a 2x average-pooled
/// pyramid. Symmetric and zero on identical inputs; not a substitute for LPIPS
/// values.
#[derive(Debug, Clone, Copy)]
pub struct GradientFeatureDistance {
    pub levels: usize,
}

impl Default for GradientFeatureDistance {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

impl GradientFeatureDistance {
    fn features(img: &Array2<f64>) -> [Array2<f64>; 3] {
        let (h, w) = img.dim();
        let gx = Array2::from_shape_fn((h, w), |(j, k)| if j + 1 < h { img[[j + 1, k]] - img[[j, k]] } else { 0.0 });
        let gy = Array2::from_shape_fn((h, w), |(j, k)| if k + 1 < w { img[[j, k + 1]] - img[[j, k]] } else { 0.0 });
        [img.clone(), gx, gy]
    }

    fn downsample(img: &Array2<f64>) -> Option<Array2<f64>> {
        let (h, w) = img.dim();
        if h < 2 || w < 2 {
            return None;
        }
        Some(Array2::from_shape_fn((h / 2, w / 2), |(j, k)| {
            0.25 * (img[[2 * j, 2 * k]] + img[[2 * j + 1, 2 * k]] + img[[2 * j, 2 * k + 1]] + img[[2 * j + 1, 2 * k + 1]])
        }))
    }
}

impl PerceptualBackend for GradientFeatureDistance {
    fn name(&self) -> &str {
        "gradient-features"
    }

    fn distance(&self, x: ArrayView3<f64>, x_hat: ArrayView3<f64>) -> Result<f64> {
        let mut total = 0.0;
        let mut terms = 0usize;
        for ch in 0..x.dim().2 {
            let mut a = x.index_axis(Axis(2), ch).to_owned();
            let mut b = x_hat.index_axis(Axis(2), ch).to_owned();
            for _ in 0..self.levels.max(1) {
                for (fa, fb) in Self::features(&a).iter().zip(Self::features(&b).iter()) {
                    total += fa.iter().zip(fb.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / fa.len() as f64;
                    terms += 1;
                }
                match (Self::downsample(&a), Self::downsample(&b)) {
                    (Some(na), Some(nb)) => {
                        a = na;
                        b = nb;
                    }
                    _ => break,
                }
            }
        }
        Ok(total / terms as f64)
    }
}

/// Metrics of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub ssim: f64,
    #[serde(with = "infinite_as_null")]
    pub psnr: f64,
    pub rrmse: f64,
    pub lpips: Option<f64>,
}

pub fn image_metrics(
    x: ArrayView3<f64>,
    x_hat: ArrayView3<f64>,
    backend: Option<&dyn PerceptualBackend>,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        ssim: ssim(x, x_hat)?,
        psnr: psnr(x, x_hat, 1.0)?,
        rrmse: rrmse(x, x_hat)?,
        lpips: perceptual_distance(x, x_hat, backend)?,
    })
}

/// Mean metrics over an evaluated set. PSNR is `+inf` when any image is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    #[serde(with = "infinite_as_null")]
    pub psnr: f64,
    pub rrmse: f64,
    pub lpips: Option<f64>,
    pub n_images: usize,
}

impl MetricReport {
    pub fn aggregate(items: &[ImageMetrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::domain("no images to aggregate"));
        }
        let n = items.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        let lpips = items
            .iter()
            .map(|m| m.lpips)
            .collect::<Option<Vec<_>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Ok(Self {
            ssim: mean(|m| m.ssim),
            psnr: mean(|m| m.psnr),
            rrmse: mean(|m| m.rrmse),
            lpips,
            n_images: items.len(),
        })
    }
}

/// JSON has no infinity; `+inf` PSNR is written as `null`.
mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() { s.serialize_f64(*v) } else { s.serialize_none() }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checker() -> Array3<f64> {
        Array::from_shape_fn((16, 16, 1), |(j, k, _)| ((j / 4 + k / 4) % 2) as f64)
    }

    fn smooth_pair() -> (Array3<f64>, Array3<f64>) {
        let a = Array::from_shape_fn((16, 16), |(j, k)| {
            0.5 + 0.4 * (j as f64 * 0.7).sin() * (k as f64 * 0.3).cos()
        });
        let b = Array::from_shape_fn((16, 16), |(j, k)| {
            (a[[j, k]] + 0.1 * (j as f64 * 1.3 + k as f64 * 0.9).cos()).clamp(0.0, 1.0)
        });
        (a.insert_axis(Axis(2)), b.insert_axis(Axis(2)))
    }

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((h, w, c), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identical_images() {
        let x = random_image(1, 12, 14, 3);
        assert_eq!(psnr(x.view(), x.view(), 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rrmse(x.view(), x.view()).unwrap(), 0.0);
    }

    #[test]
    fn psnr_closed_forms() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        let x = Array3::zeros((4, 4, 1));
        let y = Array3::from_elem((4, 4, 1), 0.1);
        assert!((psnr(x.view(), y.view(), 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn rrmse_closed_forms() {
        let x = random_image(2, 5, 5, 3);
        assert!((rrmse(x.view(), (&x * 2.0).view()).unwrap() - 1.0).abs() < 1e-12);
        assert!((rrmse(x.view(), Array3::zeros(x.raw_dim()).view()).unwrap() - 1.0).abs() < 1e-12);
        let zero = Array3::zeros((2, 2, 1));
        assert!(matches!(rrmse(zero.view(), zero.view()), Err(Error::Domain(_))));
    }

    #[test]
    fn ssim_matches_reference_values() {
        // Frozen from scikit-image structural_similarity (gaussian_weights,
        // sigma 1.5, population covariance, data_range 1).
        let x = checker();
        let inv = x.mapv(|v| 1.0 - v);
        assert!((ssim(x.view(), inv.view()).unwrap() - (-0.872_257_765_823_666_4)).abs() < 1e-9);

        let (a, b) = smooth_pair();
        assert!((ssim(a.view(), b.view()).unwrap() - 0.895_561_169_381_589).abs() < 1e-9);

        let a2 = a.index_axis(Axis(2), 0).to_owned();
        let b2 = b.index_axis(Axis(2), 0).to_owned();
        let a3 = ndarray::stack![Axis(2), a2, a2.mapv(|v| v * 0.5), a2.mapv(|v| 1.0 - v)];
        let b3 = ndarray::stack![Axis(2), b2, b2.mapv(|v| v * 0.5 + 0.1), a2.mapv(|v| 1.0 - v)];
        assert!((ssim(a3.view(), b3.view()).unwrap() - 0.917_586_627_251_943_2).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images_and_mismatch() {
        let x = Array3::zeros((10, 20, 1));
        assert!(matches!(ssim(x.view(), x.view()), Err(Error::Domain(_))));
        let y = Array3::zeros((20, 20, 1));
        assert!(matches!(ssim(y.view(), x.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn perceptual_slot() {
        let x = random_image(3, 16, 16, 3);
        let y = random_image(4, 16, 16, 3);
        assert_eq!(perceptual_distance(x.view(), y.view(), None).unwrap(), None);
        let backend = GradientFeatureDistance::default();
        let d = |a: &Array3<f64>, b: &Array3<f64>| perceptual_distance(a.view(), b.view(), Some(&backend)).unwrap().unwrap();
        assert_eq!(d(&x, &x), 0.0);
        assert!(d(&x, &y) > 0.0);
        assert_eq!(d(&x, &y), d(&y, &x));
    }

    #[test]
    fn report_aggregates_and_serializes_infinity() {
        let items = [
            ImageMetrics { ssim: 1.0, psnr: f64::INFINITY, rrmse: 0.0, lpips: None },
            ImageMetrics { ssim: 0.5, psnr: 20.0, rrmse: 0.2, lpips: None },
        ];
        let r = MetricReport::aggregate(&items).unwrap();
        assert_eq!(r.n_images, 2);
        assert_eq!(r.ssim, 0.75);
        assert_eq!(r.psnr, f64::INFINITY);
        assert_eq!(r.lpips, None);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":null"));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(MetricReport::aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn ssim_bounded_and_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_image(s1, 13, 12 + (s1 % 4) as usize, 2);
            let b = random_image(s2, a.dim().0, a.dim().1, 2);
            let ab = ssim(a.view(), b.view()).unwrap();
            prop_assert!(ab.abs() <= 1.0);
            prop_assert!((ab - ssim(b.view(), a.view()).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn psnr_decreases_and_rrmse_homogeneous(seed in any::<u64>(), s in 0.01f64..0.3, k in 1.1f64..3.0) {
            let x = random_image(seed, 6, 6, 3);
            let noise = random_image(seed ^ 0xabcdef, 6, 6, 3).mapv(|v| v - 0.5);
            let near = &x + &(&noise * s);
            let far = &x + &(&noise * (s * k));
            prop_assert!(psnr(x.view(), far.view(), 1.0).unwrap() < psnr(x.view(), near.view(), 1.0).unwrap());
            let r1 = rrmse(x.view(), near.view()).unwrap();
            let r2 = rrmse(x.view(), far.view()).unwrap();
            prop_assert!((r2 - k * r1).abs() < 1e-9);
        }

        #[test]
        fn aggregation_ignores_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut items: Vec<ImageMetrics> = (0..6)
                .map(|_| ImageMetrics { ssim: rng.random(), psnr: rng.random_range(10.0..40.0), rrmse: rng.random(), lpips: Some(rng.random()) })
                .collect();
            let a = MetricReport::aggregate(&items).unwrap();
            items.reverse();
            let b = MetricReport::aggregate(&items).unwrap();
            prop_assert!((a.ssim - b.ssim).abs() < 1e-12 && (a.psnr - b.psnr).abs() < 1e-9);
            prop_assert!((a.rrmse - b.rrmse).abs() < 1e-12);
        }
    }
}
