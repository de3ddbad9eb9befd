//! Variation penalties on the predicted shape map.
//!
//! All three variants use forward differences `beta[j+1,k] - beta[j,k]` and
//! `beta[j,k+1] - beta[j,k]`. The last row and column replicate their border
//! value, so their forward difference is zero and every pixel contributes one
//! term. A constant map therefore scores exactly `H * W * epsilon` under the
//! isotropic penalty.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_ACTIVATION_EPOCH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    /// `sum sqrt(eps^2 + dx^2 + dy^2)`
    #[default]
    TvIso,
    /// `sum dx^2 + dy^2`
    GradL2sq,
    /// `sum |dx| + |dy|`
    TvAniso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self { kind: RegularizerKind::TvIso, epsilon: DEFAULT_EPSILON, boundary: Boundary::Replicate }
    }
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, epsilon: f64) -> Self {
        Self { kind, epsilon, boundary: Boundary::Replicate }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Forward differences with replicate boundary: `(dx, dy)` where `dx` runs
/// along rows (`j`) and `dy` along columns (`k`).
pub fn forward_differences(map: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = map.dim();
    let dx = Array2::from_shape_fn((h, w), |(j, k)| {
        if j + 1 < h { map[[j + 1, k]] - map[[j, k]] } else { 0.0 }
    });
    let dy = Array2::from_shape_fn((h, w), |(j, k)| {
        if k + 1 < w { map[[j, k + 1]] - map[[j, k]] } else { 0.0 }
    });
    (dx, dy)
}

fn check_map(map: &Array2<f64>, spec: &RegularizerSpec) -> Result<()> {
    spec.validate()?;
    if map.is_empty() {
        return Err(Error::dim("empty map"));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("map contains non-finite values"));
    }
    Ok(())
}

pub fn penalty(map: &Array2<f64>, spec: &RegularizerSpec) -> Result<f64> {
    check_map(map, spec)?;
    let (dx, dy) = forward_differences(map);
    let eps2 = spec.epsilon * spec.epsilon;
    let total = dx
        .iter()
        .zip(dy.iter())
        .map(|(&a, &b)| match spec.kind {
            RegularizerKind::TvIso => (eps2 + a * a + b * b).sqrt(),
            RegularizerKind::GradL2sq => a * a + b * b,
            RegularizerKind::TvAniso => a.abs() + b.abs(),
        })
        .sum();
    Ok(total)
}

/// Gradient of [`penalty`] with respect to every map entry.
///
/// Non-smooth terms take the zero subgradient: an isotropic term whose norm is
/// exactly zero (only possible with `epsilon = 0`), or an anisotropic term whose
/// difference is exactly zero.
pub fn penalty_gradient(map: &Array2<f64>, spec: &RegularizerSpec) -> Result<Array2<f64>> {
    check_map(map, spec)?;
    let (h, w) = map.dim();
    let (dx, dy) = forward_differences(map);
    let eps2 = spec.epsilon * spec.epsilon;
    let mut grad = Array2::zeros((h, w));

    for j in 0..h {
        for k in 0..w {
            let (a, b) = (dx[[j, k]], dy[[j, k]]);
            // Partial derivatives of the (j, k) term w.r.t. its two differences.
            let (ga, gb) = match spec.kind {
                RegularizerKind::TvIso => {
                    let norm = (eps2 + a * a + b * b).sqrt();
                    if norm == 0.0 { (0.0, 0.0) } else { (a / norm, b / norm) }
                }
                RegularizerKind::GradL2sq => (2.0 * a, 2.0 * b),
                RegularizerKind::TvAniso => (sign0(a), sign0(b)),
            };
            if j + 1 < h {
                grad[[j + 1, k]] += ga;
                grad[[j, k]] -= ga;
            }
            if k + 1 < w {
                grad[[j, k + 1]] += gb;
                grad[[j, k]] -= gb;
            }
        }
    }
    Ok(grad)
}

fn sign0(v: f64) -> f64 {
    if v == 0.0 { 0.0 } else { v.signum() }
}

/// The penalty is switched on from `activation_epoch` onward.
pub fn regularizer_active(epoch: usize, activation_epoch: usize) -> bool {
    epoch >= activation_epoch
}
