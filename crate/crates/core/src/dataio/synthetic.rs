//! Synthetic paired data whose only irreducible error is a known noise field.
//!
//! Source images `x_a` are a smooth random color field with a few flat
//! geometric shapes and one or two bright "highlight" blobs that push the
//! third channel toward 1. The target is a fixed invertible color transform of
//! the source plus zero-mean Gaussian noise:
//!
//! ```text
//! T(x)     = 0.2 + 0.6 * (M x)^0.8              (per channel)
//! var(j,k) = v_floor + v_gain * x_a[j,k,2]^2
//! x_b      = clamp(T(x_a) + N(0, var), 0, 1)
//! ```
//!
//! `M` is row-stochastic with determinant 0.215. Because `T` lands in
//! `[0.2, 0.8]` and the noise standard deviation never exceeds
//! `sqrt(v_floor + v_gain) ~ 0.078`, the clamp almost never acts. The noise
//! level is a function of the source image, so it is learnable from `x_a`:
//! low and smoothly varying over the background, high on the highlights.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PairedSample;
use crate::error::{Error, Result};

/// Channel mixing matrix of the target transform.
pub const MIX: [[f64; 3]; 3] = [[0.6, 0.3, 0.1], [0.1, 0.7, 0.2], [0.25, 0.15, 0.6]];
const GAMMA: f64 = 0.8;
const OFFSET: f64 = 0.2;
const SPAN: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub size: usize,
    /// Noise variance where the third source channel is 0.
    pub v_floor: f64,
    /// Additional variance where the third source channel is 1.
    pub v_gain: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { size: 64, v_floor: 1e-4, v_gain: 6e-3 }
    }
}

impl SyntheticConfig {
    pub fn with_size(size: usize) -> Self {
        Self { size, ..Self::default() }
    }

    /// Noise-free configuration: `x_b` is exactly `T(x_a)`.
    pub fn noiseless(size: usize) -> Self {
        Self { size, v_floor: 0.0, v_gain: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub sample: PairedSample,
    pub noise_variance: Array2<f64>,
}

pub fn target_transform(x_a: &Array3<f64>) -> Array3<f64> {
    let (h, w, _) = x_a.dim();
    Array3::from_shape_fn((h, w, 3), |(j, k, c)| {
        let mixed: f64 = (0..3).map(|i| MIX[c][i] * x_a[[j, k, i]]).sum();
        OFFSET + SPAN * mixed.clamp(0.0, 1.0).powf(GAMMA)
    })
}

pub fn inverse_target_transform(x_b: &Array3<f64>) -> Array3<f64> {
    let inv = invert3(&MIX);
    let (h, w, _) = x_b.dim();
    let unmixed = x_b.mapv(|v| ((v - OFFSET) / SPAN).clamp(0.0, 1.0).powf(1.0 / GAMMA));
    Array3::from_shape_fn((h, w, 3), |(j, k, c)| (0..3).map(|i| inv[c][i] * unmixed[[j, k, i]]).sum())
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // Cofactor of (c, r), i.e. the adjugate transposed in place.
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    out
}

pub fn noise_variance_field(x_a: &Array3<f64>, config: &SyntheticConfig) -> Array2<f64> {
    let (h, w, _) = x_a.dim();
    Array2::from_shape_fn((h, w), |(j, k)| config.v_floor + config.v_gain * x_a[[j, k, 2]].powi(2))
}

/// `T(x_a)` plus one draw of the heteroscedastic noise.
pub fn noisy_target(x_a: &Array3<f64>, noise_variance: &Array2<f64>, rng: &mut impl Rng) -> Array3<f64> {
    let mut x_b = target_transform(x_a);
    for ((j, k, _), v) in x_b.indexed_iter_mut() {
        let var = noise_variance[[j, k]];
        if var > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v + var.sqrt() * z).clamp(0.0, 1.0);
        }
    }
    x_b
}

fn source_image(size: usize, rng: &mut impl Rng) -> Array3<f64> {
    let s = size as f64;
    let mut img = Array3::zeros((size, size, 3));

    // Smooth background: a few low-frequency waves per channel, rescaled to [0.1, 0.6].
    for c in 0..3 {
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.5..1.0),
                )
            })
            .collect();
        let raw = Array2::from_shape_fn((size, size), |(j, k)| {
            waves
                .iter()
                .map(|(fj, fk, phase, amp)| {
                    amp * (std::f64::consts::TAU * (fj * j as f64 + fk * k as f64) / s + phase).cos()
                })
                .sum::<f64>()
        });
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        let (lo_t, hi_t) = (rng.random_range(0.1..0.25), rng.random_range(0.45..0.6));
        for ((j, k), v) in raw.indexed_iter() {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            img[[j, k, c]] = lo_t + (hi_t - lo_t) * t;
        }
    }

    // Flat shapes.
    for _ in 0..rng.random_range(2..=4) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.65));
        let (cj, ck) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let extent = rng.random_range(0.08..0.22) * s;
        let is_disk = rng.random_bool(0.5);
        for j in 0..size {
            for k in 0..size {
                let (dj, dk) = (j as f64 - cj, k as f64 - ck);
                let inside = if is_disk {
                    dj * dj + dk * dk <= extent * extent
                } else {
                    dj.abs() <= extent && dk.abs() <= 0.7 * extent
                };
                if inside {
                    for c in 0..3 {
                        img[[j, k, c]] = color[c];
                    }
                }
            }
        }
    }

    // Bright highlights, strongest in the third channel.
    for _ in 0..rng.random_range(1..=2) {
        let (cj, ck) = (rng.random_range(0.1 * s..0.9 * s), rng.random_range(0.1 * s..0.9 * s));
        let width = rng.random_range(0.05..0.1) * s;
        for j in 0..size {
            for k in 0..size {
                let (dj, dk) = (j as f64 - cj, k as f64 - ck);
                let bump = (-(dj * dj + dk * dk) / (2.0 * width * width)).exp();
                img[[j, k, 2]] += (1.0 - img[[j, k, 2]]) * bump;
                for c in 0..2 {
                    img[[j, k, c]] += 0.5 * (1.0 - img[[j, k, c]]) * bump;
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// `n` synthetic pairs at the default noise configuration.
pub fn generate_synthetic(n: usize, size: usize, seed: u64) -> Result<Vec<SyntheticTruth>> {
    generate_synthetic_with(&SyntheticConfig::with_size(size), n, seed)
}

/// Each sample draws from its own ChaCha stream, so sample `i` does not
/// depend on how many samples are generated.
pub fn generate_synthetic_with(config: &SyntheticConfig, n: usize, seed: u64) -> Result<Vec<SyntheticTruth>> {
    if n == 0 {
        return Err(Error::domain("need at least one sample"));
    }
    if config.size < 16 {
        return Err(Error::domain(format!("size must be >= 16, got {}", config.size)));
    }
    if !(config.v_floor >= 0.0 && config.v_gain >= 0.0) {
        return Err(Error::domain("noise variances must be nonnegative"));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x_a = source_image(config.size, &mut rng);
            let noise_variance = noise_variance_field(&x_a, config);
            let x_b = noisy_target(&x_a, &noise_variance, &mut rng);
            let sample = PairedSample::new(x_a, x_b, format!("synth-{seed}-{i:05}"))?;
            Ok(SyntheticTruth { sample, noise_variance })
        })
        .collect()
}
