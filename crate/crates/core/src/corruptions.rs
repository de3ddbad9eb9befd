//! Seeded noise and artifact injection for robustness studies.
//!
//! Noise parameters are in normalized intensity units (images in `[0, 1]`).
//! Additive noise is clamped back into `[0, 1]`. Impulse noise corrupts whole
//! pixels: a hit pixel becomes black or white in every channel with equal
//! probability. Artifacts overwrite a disk or ring with a flat fill value.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    Gaussian { variance: f64 },
    Uniform { low: f64, high: f64 },
    Impulse { p: f64 },
    /// `center` is `[row, col]` in pixel units.
    Disk { center: [f64; 2], radius: f64, fill: f64 },
    Ring { center: [f64; 2], inner_radius: f64, outer_radius: f64, fill: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub corruption: Corruption,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(corruption: Corruption, seed: u64) -> Self {
        Self { corruption, seed }
    }

    pub fn gaussian(variance: f64, seed: u64) -> Self {
        Self::new(Corruption::Gaussian { variance }, seed)
    }

    pub fn uniform(low: f64, high: f64, seed: u64) -> Self {
        Self::new(Corruption::Uniform { low, high }, seed)
    }

    pub fn impulse(p: f64, seed: u64) -> Self {
        Self::new(Corruption::Impulse { p }, seed)
    }

    pub fn disk(center: [f64; 2], radius: f64, fill: f64) -> Self {
        Self::new(Corruption::Disk { center, radius, fill }, 0)
    }

    pub fn ring(center: [f64; 2], inner_radius: f64, outer_radius: f64, fill: f64) -> Self {
        Self::new(Corruption::Ring { center, inner_radius, outer_radius, fill }, 0)
    }

    /// The six noise levels of the robustness table, with their row labels.
    pub fn noise_levels(seed: u64) -> Vec<(&'static str, CorruptionSpec)> {
        vec![
            ("N(0,0.001)", Self::gaussian(0.001, seed)),
            ("N(0,0.01)", Self::gaussian(0.01, seed)),
            ("U(0,0.1)", Self::uniform(0.0, 0.1, seed)),
            ("U(0,0.01)", Self::uniform(0.0, 0.01, seed)),
            ("I(0.005)", Self::impulse(0.005, seed)),
            ("I(0.01)", Self::impulse(0.01, seed)),
        ]
    }

    pub fn is_artifact(&self) -> bool {
        matches!(self.corruption, Corruption::Disk { .. } | Corruption::Ring { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        let check_fill = |fill: f64| {
            if (0.0..=1.0).contains(&fill) { Ok(()) } else { bad(format!("fill {fill} outside [0, 1]")) }
        };
        let check_center = |c: [f64; 2]| {
            if c.iter().all(|v| v.is_finite()) { Ok(()) } else { bad("non-finite center".into()) }
        };
        match self.corruption {
            Corruption::Gaussian { variance } if !(variance.is_finite() && variance >= 0.0) => {
                bad(format!("variance must be >= 0, got {variance}"))
            }
            Corruption::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low <= high) => {
                bad(format!("uniform bounds must satisfy low <= high, got [{low}, {high}]"))
            }
            Corruption::Impulse { p } if !(0.0..=1.0).contains(&p) => {
                bad(format!("impulse probability {p} outside [0, 1]"))
            }
            Corruption::Disk { center, radius, fill } => {
                check_center(center)?;
                if !(radius.is_finite() && radius >= 0.0) {
                    return bad(format!("radius must be >= 0, got {radius}"));
                }
                check_fill(fill)
            }
            Corruption::Ring { center, inner_radius, outer_radius, fill } => {
                check_center(center)?;
                if !(inner_radius >= 0.0 && outer_radius.is_finite() && inner_radius < outer_radius) {
                    return bad(format!(
                        "ring radii must satisfy 0 <= inner < outer, got {inner_radius}, {outer_radius}"
                    ));
                }
                check_fill(fill)
            }
            _ => Ok(()),
        }
    }
}

/// Pixels overwritten by a disk or ring artifact.
pub fn corruption_mask(spec: &CorruptionSpec, height: usize, width: usize) -> Result<Array2<bool>> {
    spec.validate()?;
    let inside: Box<dyn Fn(f64) -> bool> = match spec.corruption {
        // A zero-radius disk has zero area, even if its center hits a pixel.
        Corruption::Disk { radius, .. } => Box::new(move |d| radius > 0.0 && d <= radius),
        Corruption::Ring { inner_radius, outer_radius, .. } => {
            Box::new(move |d| d >= inner_radius && d <= outer_radius)
        }
        other => return Err(Error::Unsupported(format!("{other:?} has no spatial mask"))),
    };
    let center = match spec.corruption {
        Corruption::Disk { center, .. } | Corruption::Ring { center, .. } => center,
        _ => unreachable!(),
    };
    Ok(Array2::from_shape_fn((height, width), |(j, k)| {
        let (dj, dk) = (j as f64 - center[0], k as f64 - center[1]);
        inside((dj * dj + dk * dk).sqrt())
    }))
}

/// Corrupted copy of `image` (`H x W x C`, values in `[0, 1]`).
pub fn corrupt(image: &Array3<f64>, spec: &CorruptionSpec) -> Result<Array3<f64>> {
    spec.validate()?;
    if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain("input image must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = image.clone();
    match spec.corruption {
        Corruption::Gaussian { variance } => {
            if variance > 0.0 {
                let normal = Normal::new(0.0, variance.sqrt()).expect("positive std");
                out.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
        Corruption::Uniform { low, high } => {
            if low < high {
                let uniform = Uniform::new(low, high).expect("low < high");
                out.mapv_inplace(|v| (v + uniform.sample(&mut rng)).clamp(0.0, 1.0));
            } else if low != 0.0 {
                out.mapv_inplace(|v| (v + low).clamp(0.0, 1.0));
            }
        }
        Corruption::Impulse { p } => {
            for mut pixel in out.lanes_mut(Axis(2)) {
                if rng.random_bool(p) {
                    let value = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                    pixel.fill(value);
                }
            }
        }
        Corruption::Disk { fill, .. } | Corruption::Ring { fill, .. } => {
            let (h, w, _) = image.dim();
            let mask = corruption_mask(spec, h, w)?;
            for ((j, k), &hit) in mask.indexed_iter() {
                if hit {
                    out.index_axis_mut(Axis(0), j).index_axis_mut(Axis(0), k).fill(fill);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assert_ne, proptest};

    fn image(seed: u64, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..=1.0))
    }

    #[test]
    fn no_op_specs_are_identity() {
        let x = image(0, 9, 7);
        assert_eq!(corrupt(&x, &CorruptionSpec::gaussian(0.0, 3)).unwrap(), x);
        assert_eq!(corrupt(&x, &CorruptionSpec::impulse(0.0, 3)).unwrap(), x);
        assert_eq!(corrupt(&x, &CorruptionSpec::uniform(0.0, 0.0, 3)).unwrap(), x);
        assert_eq!(corrupt(&x, &CorruptionSpec::disk([4.0, 3.0], 0.0, 1.0)).unwrap(), x);
    }

    #[test]
    fn full_impulse_saturates_every_pixel() {
        let x = image(1, 10, 10);
        let y = corrupt(&x, &CorruptionSpec::impulse(1.0, 5)).unwrap();
        for pixel in y.lanes(Axis(2)) {
            assert!(pixel.iter().all(|v| *v == pixel[0]));
            assert!(pixel[0] == 0.0 || pixel[0] == 1.0);
        }
    }

    #[test]
    fn impulse_rate_within_binomial_band() {
        let x = Array3::from_elem((1000, 1000, 1), 0.5);
        for seed in 0..3 {
            let y = corrupt(&x, &CorruptionSpec::impulse(0.01, seed)).unwrap();
            let hits = y.iter().filter(|v| **v != 0.5).count() as f64;
            let n = 1e6;
            let sd = (n * 0.01 * 0.99f64).sqrt();
            assert!((hits - n * 0.01).abs() < 3.0 * sd, "seed {seed}: {hits}");
        }
    }

    #[test]
    fn gaussian_noise_has_requested_variance() {
        let x = Array3::from_elem((200, 200, 3), 0.5);
        let y = corrupt(&x, &CorruptionSpec::gaussian(0.001, 11)).unwrap();
        let n = y.len() as f64;
        let var = y.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / n;
        assert!((var - 0.001).abs() < 0.001 * 0.02);
    }

    #[test]
    fn uniform_noise_mean() {
        let x = Array3::from_elem((200, 200, 1), 0.3);
        let y = corrupt(&x, &CorruptionSpec::uniform(0.0, 0.1, 2)).unwrap();
        let mean = y.mean().unwrap();
        assert!((mean - 0.35).abs() < 1e-3);
    }

    #[test]
    fn invalid_specs_rejected() {
        let x = image(2, 4, 4);
        for spec in [
            CorruptionSpec::gaussian(-1.0, 0),
            CorruptionSpec::uniform(0.2, 0.1, 0),
            CorruptionSpec::impulse(1.5, 0),
            CorruptionSpec::disk([1.0, 1.0], -2.0, 0.5),
            CorruptionSpec::disk([1.0, 1.0], 2.0, 1.5),
            CorruptionSpec::ring([1.0, 1.0], 3.0, 3.0, 0.5),
        ] {
            assert!(matches!(corrupt(&x, &spec), Err(Error::Domain(_))), "{spec:?}");
        }
    }

    #[test]
    fn masks() {
        assert!(!corruption_mask(&CorruptionSpec::disk([5.0, 5.0], 0.0, 1.0), 11, 11).unwrap().iter().any(|b| *b));
        assert!(corruption_mask(&CorruptionSpec::disk([5.0, 5.0], 100.0, 1.0), 11, 11).unwrap().iter().all(|b| *b));
        assert!(matches!(
            corruption_mask(&CorruptionSpec::gaussian(0.1, 0), 4, 4),
            Err(Error::Unsupported(_))
        ));
        let ring = corruption_mask(&CorruptionSpec::ring([10.0, 10.0], 3.0, 5.0, 1.0), 21, 21).unwrap();
        assert!(!ring[[10, 10]]);
        assert!(ring[[10, 14]]);
        assert!(!ring[[10, 16]]);
    }

    #[test]
    fn disk_area_matches_circle() {
        for r in [10.0, 17.5, 30.0] {
            let spec = CorruptionSpec::disk([100.3, 99.6], r, 1.0);
            let count = corruption_mask(&spec, 200, 200).unwrap().iter().filter(|b| **b).count() as f64;
            let ratio = count / (std::f64::consts::PI * r * r);
            assert!((0.95..=1.05).contains(&ratio), "r = {r}: {ratio}");
        }
    }

    #[test]
    fn artifact_overwrites_only_masked_pixels() {
        let x = image(4, 16, 16);
        let spec = CorruptionSpec::ring([8.0, 8.0], 2.0, 4.0, 0.25);
        let y = corrupt(&x, &spec).unwrap();
        let mask = corruption_mask(&spec, 16, 16).unwrap();
        for ((j, k, c), v) in y.indexed_iter() {
            if mask[[j, k]] {
                assert_eq!(*v, 0.25);
            } else {
                assert_eq!(*v, x[[j, k, c]]);
            }
        }
    }

    #[test]
    fn spec_serialization_is_flat() {
        let spec = CorruptionSpec::gaussian(0.01, 9);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"gaussian","variance":0.01,"seed":9}"#);
        let ring: CorruptionSpec = serde_json::from_str(
            r#"{"kind":"ring","center":[3,4],"inner_radius":1,"outer_radius":2,"fill":1}"#,
        )
        .unwrap();
        assert_eq!(ring, CorruptionSpec::ring([3.0, 4.0], 1.0, 2.0, 1.0));
    }

    proptest! {
        #[test]
        fn range_shape_and_determinism(seed in any::<u64>(), which in 0usize..6) {
            let x = image(seed, 6, 5);
            let (_, spec) = CorruptionSpec::noise_levels(seed)[which];
            let a = corrupt(&x, &spec).unwrap();
            let b = corrupt(&x, &spec).unwrap();
            prop_assert_eq!(a.dim(), x.dim());
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn seeds_change_the_noise(seed in 0u64..1_000_000) {
            let x = Array3::from_elem((8, 8, 3), 0.5);
            let a = corrupt(&x, &CorruptionSpec::gaussian(0.01, seed)).unwrap();
            let b = corrupt(&x, &CorruptionSpec::gaussian(0.01, seed + 1)).unwrap();
            prop_assert_ne!(a, b);
        }
    }
}
