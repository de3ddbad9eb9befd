//! Zero-mean generalized normal residual model.
//!
//! A pixel residual `r` is modelled as `GND(0, alpha, beta)` with density
//! `beta / (2 alpha Gamma(1/beta)) * exp(-(|r|/alpha)^beta)`. `beta = 2` is the
//! Gaussian with `sigma^2 = alpha^2 / 2`, `beta = 1` the Laplacian.
//!
//! Images carry several channels but the model predicts one `(alpha, beta)`
//! per spatial location, so the channel absolute residuals are averaged
//! before entering the likelihood.

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Default lower bound on the shape parameter.
pub const DEFAULT_BETA_MIN: f64 = 0.1;

/// Offset inside `log(|r| + ETA)` so a zero residual never hits `log 0`.
pub const ETA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl Reduction {
    fn apply(self, per_pixel: &Array2<f64>) -> f64 {
        let sum = per_pixel.sum();
        match self {
            Reduction::Sum => sum,
            Reduction::Mean => sum / per_pixel.len() as f64,
        }
    }
}

/// Signed residuals `x_hat - x`, laid out `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap(Array3<f64>);

impl ResidualMap {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("residual map contains non-finite values"));
        }
        Ok(Self(values))
    }

    /// Residual between a reconstruction and its target.
    pub fn between(reconstruction: ArrayView3<f64>, target: ArrayView3<f64>) -> Result<Self> {
        if reconstruction.shape() != target.shape() {
            return Err(Error::dim(format!(
                "reconstruction {:?} vs target {:?}",
                reconstruction.shape(),
                target.shape()
            )));
        }
        Self::new(&reconstruction - &target)
    }

    /// Single-channel residual map.
    pub fn from_2d(values: Array2<f64>) -> Result<Self> {
        Self::new(values.insert_axis(Axis(2)))
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.dim().0
    }

    pub fn width(&self) -> usize {
        self.0.dim().1
    }

    pub fn channels(&self) -> usize {
        self.0.dim().2
    }

    /// Mean absolute residual over channels, one value per pixel.
    pub fn channel_abs_mean(&self) -> Array2<f64> {
        self.0.mapv(f64::abs).mean_axis(Axis(2)).expect("at least one channel")
    }
}

/// Per-pixel scale (`alpha`) and shape (`beta`) maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GndParams {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub beta_min: f64,
}

impl GndParams {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>) -> Result<Self> {
        Self::with_beta_min(alpha, beta, DEFAULT_BETA_MIN)
    }

    pub fn with_beta_min(alpha: Array2<f64>, beta: Array2<f64>, beta_min: f64) -> Result<Self> {
        let params = Self { alpha, beta, beta_min };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.dim() != self.beta.dim() {
            return Err(Error::dim(format!(
                "alpha {:?} vs beta {:?}",
                self.alpha.dim(),
                self.beta.dim()
            )));
        }
        if !(self.beta_min > 0.0 && self.beta_min.is_finite()) {
            return Err(Error::domain(format!("beta_min must be positive, got {}", self.beta_min)));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::domain(format!("alpha must be positive and finite, got {a}")));
        }
        if let Some(b) = self.beta.iter().find(|b| !(b.is_finite() && **b >= self.beta_min)) {
            return Err(Error::domain(format!(
                "beta must be finite and >= {}, got {b}",
                self.beta_min
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> (usize, usize) {
        self.alpha.dim()
    }

    fn check_residual(&self, residual: &ResidualMap) -> Result<()> {
        self.validate()?;
        let (h, w) = self.dim();
        if residual.height() != h || residual.width() != w {
            return Err(Error::dim(format!(
                "residual is {}x{}, params are {h}x{w}",
                residual.height(),
                residual.width()
            )));
        }
        Ok(())
    }
}

/// Predicted variance per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub variance: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub total: f64,
    pub per_pixel: Array2<f64>,
}

/// `(|r|/alpha)^beta - log(beta/alpha) + log Gamma(1/beta)` for one pixel.
pub fn nll_scalar(abs_residual: f64, alpha: f64, beta: f64) -> f64 {
    let power = (beta * (abs_residual + ETA).ln() - beta * alpha.ln()).exp();
    power - (beta / alpha).ln() + ln_gamma(1.0 / beta)
}

/// Variance `alpha^2 Gamma(3/beta) / Gamma(1/beta)` of one GND.
pub fn variance_scalar(alpha: f64, beta: f64) -> f64 {
    alpha * alpha * (ln_gamma(3.0 / beta) - ln_gamma(1.0 / beta)).exp()
}

/// Negative log-likelihood of the residuals under the per-pixel GND.
pub fn gnd_nll(residual: &ResidualMap, params: &GndParams, reduction: Reduction) -> Result<NllOutput> {
    params.check_residual(residual)?;
    let abs = residual.channel_abs_mean();
    let per_pixel = Zip::from(&abs)
        .and(&params.alpha)
        .and(&params.beta)
        .map_collect(|&r, &a, &b| nll_scalar(r, a, b));
    if per_pixel.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("negative log-likelihood overflowed"));
    }
    Ok(NllOutput { total: reduction.apply(&per_pixel), per_pixel })
}

/// Heteroscedastic Gaussian NLL `r^2 / (2 sigma^2) + log(sigma^2) / 2`.
pub fn gaussian_nll(residual: &ResidualMap, sigma2: &Array2<f64>, reduction: Reduction) -> Result<NllOutput> {
    if (residual.height(), residual.width()) != sigma2.dim() {
        return Err(Error::dim(format!(
            "residual is {}x{}, sigma2 is {:?}",
            residual.height(),
            residual.width(),
            sigma2.dim()
        )));
    }
    if let Some(s) = sigma2.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::domain(format!("sigma2 must be positive and finite, got {s}")));
    }
    let abs = residual.channel_abs_mean();
    let per_pixel = Zip::from(&abs)
        .and(sigma2)
        .map_collect(|&r, &s2| r * r / (2.0 * s2) + 0.5 * s2.ln());
    Ok(NllOutput { total: reduction.apply(&per_pixel), per_pixel })
}

pub fn gnd_variance(params: &GndParams) -> Result<UncertaintyMap> {
    params.validate()?;
    let variance = Zip::from(&params.alpha)
        .and(&params.beta)
        .map_collect(|&a, &b| variance_scalar(a, b));
    if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::domain("variance is not representable for these parameters"));
    }
    Ok(UncertaintyMap { variance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllGradients {
    pub d_residual: Array3<f64>,
    pub d_alpha: Array2<f64>,
    pub d_beta: Array2<f64>,
}

/// Analytic gradients of the summed NLL with respect to the residual and both
/// parameter maps.
///
/// The channel mean of `|r_c|` has a kink wherever a channel residual is
/// exactly zero; those points are reported instead of being smoothed over.
/// The one exception is a pixel whose channels are all zero with `beta > 1`,
/// where the power term is flat and the gradient is zero.
pub fn gnd_nll_gradients(residual: &ResidualMap, params: &GndParams) -> Result<NllGradients> {
    params.check_residual(residual)?;
    let (h, w) = params.dim();
    let channels = residual.channels();
    let abs = residual.channel_abs_mean();
    let values = residual.values();

    let mut d_residual = Array3::zeros(values.raw_dim());
    let mut d_alpha = Array2::zeros((h, w));
    let mut d_beta = Array2::zeros((h, w));

    for j in 0..h {
        for k in 0..w {
            let (r, a, b) = (abs[[j, k]], params.alpha[[j, k]], params.beta[[j, k]]);
            let shifted = r + ETA;
            let power = (b * shifted.ln() - b * a.ln()).exp();

            d_alpha[[j, k]] = -b * power / a + 1.0 / a;
            d_beta[[j, k]] = power * (shifted / a).ln() - 1.0 / b - digamma(1.0 / b) / (b * b);

            if r == 0.0 {
                if b <= 1.0 {
                    return Err(Error::NonDifferentiable(format!(
                        "zero residual with beta = {b} at ({j}, {k})"
                    )));
                }
                continue;
            }
            let d_abs = b * power / shifted / channels as f64;
            for c in 0..channels {
                let rc = values[[j, k, c]];
                if rc == 0.0 {
                    return Err(Error::NonDifferentiable(format!(
                        "zero channel residual at ({j}, {k}, {c})"
                    )));
                }
                d_residual[[j, k, c]] = d_abs * rc.signum();
            }
        }
    }
    Ok(NllGradients { d_residual, d_alpha, d_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    /// Gamma by Simpson quadrature of `int t^z e^-t dt`,
    /// divided by `z` (so the integrand stays bounded at the origin).
    fn quadrature_gamma(z: f64) -> f64 {
        let (upper, n) = (60.0, 400_000);
        let h = upper / n as f64;
        let f = |t: f64| if t == 0.0 { 0.0 } else { t.powf(z) * (-t).exp() };
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * f(i as f64 * h);
        }
        acc * h / 3.0 / z
    }

    fn brute_nll(r: f64, alpha: f64, beta: f64) -> f64 {
        (r.abs() / alpha).powf(beta) - (beta / alpha).ln() + quadrature_gamma(1.0 / beta).ln()
    }

    fn single(r: f64, alpha: f64, beta: f64) -> (ResidualMap, GndParams) {
        (
            ResidualMap::from_2d(arr2(&[[r]])).unwrap(),
            GndParams::new(arr2(&[[alpha]]), arr2(&[[beta]])).unwrap(),
        )
    }

    fn random_case(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> (ResidualMap, GndParams) {
        let r = Array::from_shape_fn((h, w, c), |_| {
            let v: f64 = rng.random_range(0.01..0.8);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let alpha = Array::from_shape_fn((h, w), |_| rng.random_range(0.05..1.5));
        let beta = Array::from_shape_fn((h, w), |_| rng.random_range(0.3..4.0));
        (ResidualMap::new(r).unwrap(), GndParams::new(alpha, beta).unwrap())
    }

    #[test]
    fn oracle_quadrature_gamma_is_sane() {
        assert!(rel_err(quadrature_gamma(0.5), std::f64::consts::PI.sqrt()) < 1e-5);
        assert!(rel_err(quadrature_gamma(3.0), 2.0) < 1e-9);
    }

    #[test]
    fn unit_laplace_pixel() {
        let (r, p) = single(1.0, 1.0, 1.0);
        let out = gnd_nll(&r, &p, Reduction::Sum).unwrap();
        assert!((out.per_pixel[[0, 0]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_residual_gaussian_shape() {
        // -log 2 + log Gamma(1/2), frozen from a 30-digit evaluation.
        let (r, p) = single(0.0, 1.0, 2.0);
        let out = gnd_nll(&r, &p, Reduction::Sum).unwrap();
        assert!((out.per_pixel[[0, 0]] - (-0.120_782_237_635_245_2)).abs() < 1e-12);
        assert!((brute_nll(0.0, 1.0, 2.0) - out.total).abs() < 1e-5);
    }

    #[test]
    fn fractional_shape_matches_quadrature_oracle() {
        let expected = 0.715_832_347_599_304_5;
        assert!((brute_nll(0.5, 2.0, 1.5) - expected).abs() < 1e-5);
        let (r, p) = single(0.5, 2.0, 1.5);
        let out = gnd_nll(&r, &p, Reduction::Mean).unwrap();
        assert!((out.total - expected).abs() < 1e-10);
    }

    #[test]
    fn gaussian_examples() {
        let s1 = arr2(&[[1.0]]);
        let r0 = ResidualMap::from_2d(arr2(&[[0.0]])).unwrap();
        let r1 = ResidualMap::from_2d(arr2(&[[1.0]])).unwrap();
        let r2 = ResidualMap::from_2d(arr2(&[[2.0]])).unwrap();
        assert_eq!(gaussian_nll(&r0, &s1, Reduction::Sum).unwrap().total, 0.0);
        assert_eq!(gaussian_nll(&r1, &s1, Reduction::Sum).unwrap().total, 0.5);
        let v = gaussian_nll(&r2, &arr2(&[[4.0]]), Reduction::Sum).unwrap().total;
        assert!((v - 1.193_147_180_559_945).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_nonpositive_variance() {
        let r = ResidualMap::from_2d(arr2(&[[0.3]])).unwrap();
        assert!(matches!(gaussian_nll(&r, &arr2(&[[0.0]]), Reduction::Sum), Err(Error::Domain(_))));
    }

    #[test]
    fn variance_closed_forms() {
        let v = |a: f64, b: f64| {
            let p = GndParams::new(arr2(&[[a]]), arr2(&[[b]])).unwrap();
            gnd_variance(&p).unwrap().variance[[0, 0]]
        };
        assert!((v(1.0, 2.0) - 0.5).abs() < 1e-12);
        assert!((v(1.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((v(2.0, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(matches!(GndParams::new(arr2(&[[0.0]]), arr2(&[[1.0]])), Err(Error::Domain(_))));
        assert!(matches!(GndParams::new(arr2(&[[1.0]]), arr2(&[[0.05]])), Err(Error::Domain(_))));
        assert!(matches!(
            GndParams::new(arr2(&[[1.0, 1.0]]), arr2(&[[1.0]])),
            Err(Error::Dimension(_))
        ));
        // Mutated after construction: the op still refuses, nothing is clamped.
        let (r, mut p) = single(0.2, 1.0, 1.0);
        p.alpha[[0, 0]] = -1.0;
        assert!(matches!(gnd_nll(&r, &p, Reduction::Sum), Err(Error::Domain(_))));
        assert!(matches!(gnd_variance(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let r = ResidualMap::from_2d(Array2::zeros((2, 3))).unwrap();
        let p = GndParams::new(Array2::ones((3, 2)), Array2::ones((3, 2))).unwrap();
        assert!(matches!(gnd_nll(&r, &p, Reduction::Sum), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_residual_rejected() {
        assert!(ResidualMap::from_2d(arr2(&[[f64::NAN]])).is_err());
    }

    #[test]
    fn alpha_derivative_by_hand() {
        let (r, p) = single(1.0, 1.0, 2.0);
        let g = gnd_nll_gradients(&r, &p).unwrap();
        assert!((g.d_alpha[[0, 0]] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_residual_has_zero_slope_for_smooth_shapes() {
        let (r, p) = single(0.0, 0.7, 2.0);
        let g = gnd_nll_gradients(&r, &p).unwrap();
        assert_eq!(g.d_residual[[0, 0, 0]], 0.0);
    }

    #[test]
    fn kinks_are_reported() {
        let (r, p) = single(0.0, 1.0, 0.5);
        assert!(matches!(gnd_nll_gradients(&r, &p), Err(Error::NonDifferentiable(_))));
        let r = ResidualMap::new(Array3::from_shape_vec((1, 1, 2), vec![0.3, 0.0]).unwrap()).unwrap();
        let p = GndParams::new(arr2(&[[1.0]]), arr2(&[[2.0]])).unwrap();
        assert!(matches!(gnd_nll_gradients(&r, &p), Err(Error::NonDifferentiable(_))));
    }

    /// Central differences of the summed NLL, perturbing one input at a time.
    fn fd_check(residual: &ResidualMap, params: &GndParams) {
        let step = 1e-5;
        let g = gnd_nll_gradients(residual, params).unwrap();
        let total = |r: &ResidualMap, p: &GndParams| gnd_nll(r, p, Reduction::Sum).unwrap().total;

        for (idx, analytic) in g.d_residual.indexed_iter() {
            let mut plus = residual.values().clone();
            let mut minus = plus.clone();
            plus[idx] += step;
            minus[idx] -= step;
            let fd = (total(&ResidualMap::new(plus).unwrap(), params)
                - total(&ResidualMap::new(minus).unwrap(), params))
                / (2.0 * step);
            assert!(rel_err(*analytic, fd) < 1e-4, "d_residual{idx:?}: {analytic} vs {fd}");
        }
        for (idx, analytic) in g.d_alpha.indexed_iter() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.alpha[idx] += step;
            minus.alpha[idx] -= step;
            let fd = (total(residual, &plus) - total(residual, &minus)) / (2.0 * step);
            assert!(rel_err(*analytic, fd) < 1e-4, "d_alpha{idx:?}: {analytic} vs {fd}");
        }
        for (idx, analytic) in g.d_beta.indexed_iter() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.beta[idx] += step;
            minus.beta[idx] -= step;
            let fd = (total(residual, &plus) - total(residual, &minus)) / (2.0 * step);
            assert!(rel_err(*analytic, fd) < 1e-4, "d_beta{idx:?}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (r, p) = random_case(&mut rng, 3, 4, 3);
            fd_check(&r, &p);
        }
    }

    proptest! {
        #[test]
        fn gaussian_reduction_constant(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, p) = random_case(&mut rng, h, w, 1);
            let beta2 = GndParams::new(p.alpha.clone(), Array2::from_elem((h, w), 2.0)).unwrap();
            let sigma2 = p.alpha.mapv(|a| a * a / 2.0);
            let diff = gnd_nll(&r, &beta2, Reduction::Sum).unwrap().total
                - gaussian_nll(&r, &sigma2, Reduction::Sum).unwrap().total;
            let expected = (h * w) as f64 * 0.5 * (std::f64::consts::PI / 2.0).ln();
            prop_assert!(rel_err(diff, expected) < 1e-6);
            let var = gnd_variance(&beta2).unwrap().variance;
            for (v, s) in var.iter().zip(sigma2.iter()) {
                prop_assert!(rel_err(*v, *s) < 1e-12);
            }
        }

        #[test]
        fn scale_covariance(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, p) = random_case(&mut rng, 3, 3, 3);
            let scaled_r = ResidualMap::new(r.values() * c).unwrap();
            let scaled_p = GndParams::new(&p.alpha * c, p.beta.clone()).unwrap();
            let lhs = gnd_nll(&scaled_r, &scaled_p, Reduction::Sum).unwrap().total;
            let rhs = gnd_nll(&r, &p, Reduction::Sum).unwrap().total + 9.0 * c.ln();
            prop_assert!(rel_err(lhs, rhs) < 1e-6);
        }

        #[test]
        fn monotone_in_residual_and_scale(
            r1 in 0.0f64..2.0, dr in 0.0f64..2.0,
            a in 0.01f64..3.0, da in 1e-3f64..3.0, b in 0.1f64..6.0,
        ) {
            prop_assert!(nll_scalar(r1 + dr, a, b) >= nll_scalar(r1, a, b));
            prop_assert!(variance_scalar(a + da, b) > variance_scalar(a, b));
        }
    }
}
