//! Generator and discriminator objectives.
//!
//! Patch score maps are globally average-pooled to one score per image before
//! the least-squares losses. Every batch reduction is a mean. The likelihood
//! term is the per-pixel mean of the generalized-normal NLL; the penalty on the
//! shape map is summed over pixels and averaged over the batch.
//!
//! Each loss exists twice: on plain arrays (reference values, reporting) and
//! on tensors (training, with gradients).

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use uar_core::gnd::{gnd_nll, GndParams, Reduction, ResidualMap, ETA};
use uar_core::regularizers::{penalty, regularizer_active, RegularizerKind, RegularizerSpec};
use uar_core::ImageMap;

use crate::error::{Error, Result};
use crate::net::{GeneratorTensors, PatchScoreMap};
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_adv: f64,
    pub w_nll: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_l1: 1.0, w_adv: 1e-3, w_nll: 1e-4, lambda: 1e-12 }
    }
}

impl LossWeights {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_l1", self.w_l1), ("w_adv", self.w_adv), ("w_nll", self.w_nll), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub adv: f64,
    pub nll: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted total of the parts. `reg` is zeroed when the penalty is inactive.
    pub fn combine(l1: f64, adv: f64, nll: f64, reg: f64, weights: &LossWeights, active: bool) -> Self {
        let reg = if active { reg } else { 0.0 };
        let total = weights.w_l1 * l1 + weights.w_adv * adv + weights.w_nll * nll + weights.lambda * reg;
        Self { l1, adv, nll, reg, total }
    }

    pub fn is_finite(&self) -> bool {
        [self.l1, self.adv, self.nll, self.reg, self.total].iter().all(|v| v.is_finite())
    }

    /// Whether `total` equals the weighted recombination of the parts.
    pub fn is_consistent(&self, weights: &LossWeights) -> bool {
        let expect = weights.w_l1 * self.l1 + weights.w_adv * self.adv + weights.w_nll * self.nll + weights.lambda * self.reg;
        (expect - self.total).abs() <= 1e-12 * expect.abs().max(1.0)
    }

    /// Component-wise mean, with the total recombined from the mean parts.
    pub fn mean(items: &[LossBreakdown], weights: &LossWeights) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Self::combine(avg(|b| b.l1), avg(|b| b.adv), avg(|b| b.nll), avg(|b| b.reg), weights, true))
    }
}

pub fn pooled_score(map: &PatchScoreMap) -> Result<f64> {
    map.scores.mean().ok_or_else(|| Error::Dimension("empty score map".into()))
}

fn mean_sq_to(scores: &[PatchScoreMap], target: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(uar_core::Error::Domain("empty score batch".into()).into());
    }
    let mut acc = 0.0;
    for s in scores {
        acc += (pooled_score(s)? - target).powi(2);
    }
    Ok(acc / scores.len() as f64)
}

/// Mean over the batch of `(pooled - 1)^2`.
pub fn adv_loss_generator(fake: &[PatchScoreMap]) -> Result<f64> {
    mean_sq_to(fake, 1.0)
}

/// `(mean pooled_fake^2 + mean (pooled_real - 1)^2) / 2`.
pub fn discriminator_loss(real: &[PatchScoreMap], fake: &[PatchScoreMap]) -> Result<f64> {
    Ok(0.5 * (mean_sq_to(fake, 0.0)? + mean_sq_to(real, 1.0)?))
}

/// Mean absolute difference over pixels and channels.
pub fn l1_fidelity(x_b: &ImageMap, x_hat: &ImageMap) -> Result<f64> {
    if x_b.dim() != x_hat.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", x_b.dim(), x_hat.dim())));
    }
    let n = x_b.len().max(1) as f64;
    Ok(x_b.iter().zip(x_hat.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// One sample's contribution to the generator objective.
pub struct GeneratorSample<'a> {
    pub target: &'a ImageMap,
    pub reconstruction: &'a ImageMap,
    pub params: &'a GndParams,
    pub fake_scores: &'a PatchScoreMap,
}

/// Generator loss on a batch of arrays. Components are batch means.
pub fn generator_total(
    batch: &[GeneratorSample<'_>],
    weights: &LossWeights,
    reg_spec: &RegularizerSpec,
    epoch: usize,
    activation_epoch: usize,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(uar_core::Error::Domain("empty batch".into()).into());
    }
    weights.validate()?;
    let n = batch.len() as f64;
    let (mut l1, mut nll, mut reg) = (0.0, 0.0, 0.0);
    let mut fakes = Vec::with_capacity(batch.len());
    for s in batch {
        l1 += l1_fidelity(s.target, s.reconstruction)?;
        let residual = ResidualMap::between(s.reconstruction.view(), s.target.view())?;
        nll += gnd_nll(&residual, s.params, Reduction::Mean)?.total;
        reg += penalty(&s.params.beta, reg_spec)?;
        fakes.push(s.fake_scores.clone());
    }
    let adv = adv_loss_generator(&fakes)?;
    let active = regularizer_active(epoch, activation_epoch);
    Ok(LossBreakdown::combine(l1 / n, adv, nll / n, reg / n, weights, active))
}

// ---- tensor forms -------------------------------------------------------

fn pooled(scores: &Tensor) -> Result<Tensor> {
    let (b, ..) = scores.dims4()?;
    if b == 0 {
        return Err(uar_core::Error::Domain("empty score batch".into()).into());
    }
    Ok(scores.flatten_from(1)?.mean(1)?)
}

pub fn adv_loss_generator_t(fake_scores: &Tensor) -> Result<Tensor> {
    Ok((pooled(fake_scores)? - 1.0)?.sqr()?.mean_all()?)
}

pub fn discriminator_loss_t(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let fake = pooled(fake_scores)?.sqr()?.mean_all()?;
    let real = (pooled(real_scores)? - 1.0)?.sqr()?.mean_all()?;
    Ok(((fake + real)? * 0.5)?)
}

pub fn l1_fidelity_t(target: &Tensor, reconstruction: &Tensor) -> Result<Tensor> {
    if target.dims() != reconstruction.dims() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", target.dims(), reconstruction.dims())));
    }
    Ok((target - reconstruction)?.abs()?.mean_all()?)
}

/// Per-pixel GND NLL `B x 1 x H x W`. `|r|` is the channel mean of the
/// absolute residual.
pub fn gnd_nll_map_t(target: &Tensor, reconstruction: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let abs_r = (reconstruction - target)?.abs()?.mean_keepdim(1)?;
    let log_ratio = ((abs_r + ETA)?.log()? - alpha.log()?)?;
    let power = (beta * log_ratio)?.exp()?;
    let log_norm = (beta.log()? - alpha.log()?)?;
    Ok(((power - log_norm)? + ln_gamma(&beta.recip()?)?)?)
}

pub fn gnd_nll_t(target: &Tensor, reconstruction: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
    Ok(gnd_nll_map_t(target, reconstruction, alpha, beta)?.mean_all()?)
}

/// Forward differences with replicate boundary on `B x 1 x H x W`; the last
/// row/column difference is zero.
fn forward_differences_t(map: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = map.dims4()?;
    let dx = if h > 1 {
        (map.narrow(2, 1, h - 1)? - map.narrow(2, 0, h - 1)?)?.pad_with_zeros(2, 0, 1)?
    } else {
        map.zeros_like()?
    };
    let dy = if w > 1 {
        (map.narrow(3, 1, w - 1)? - map.narrow(3, 0, w - 1)?)?.pad_with_zeros(3, 0, 1)?
    } else {
        map.zeros_like()?
    };
    Ok((dx, dy))
}

/// Penalty summed over pixels, averaged over the batch.
pub fn penalty_t(map: &Tensor, spec: &RegularizerSpec) -> Result<Tensor> {
    spec.validate()?;
    let (b, ..) = map.dims4()?;
    let (dx, dy) = forward_differences_t(map)?;
    let terms = match spec.kind {
        RegularizerKind::TvIso => ((dx.sqr()? + dy.sqr()?)? + spec.epsilon * spec.epsilon)?.sqrt()?,
        RegularizerKind::GradL2sq => (dx.sqr()? + dy.sqr()?)?,
        RegularizerKind::TvAniso => (dx.abs()? + dy.abs()?)?,
    };
    Ok((terms.sum_all()? / b as f64)?)
}

/// Generator objective as tensors, ready for backpropagation.
pub struct GeneratorLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

/// Builds the generator objective. The penalty enters the graph only when it
/// is active and `lambda > 0`; it is still reported whenever active.
pub fn generator_objective(
    target: &Tensor,
    out: &GeneratorTensors,
    fake_scores: &Tensor,
    weights: &LossWeights,
    reg_spec: &RegularizerSpec,
    active: bool,
) -> Result<GeneratorLoss> {
    let l1 = l1_fidelity_t(target, &out.reconstruction)?;
    let adv = adv_loss_generator_t(fake_scores)?;
    let nll = gnd_nll_t(target, &out.reconstruction, &out.alpha, &out.beta)?;
    let mut total = (((&l1 * weights.w_l1)? + (&adv * weights.w_adv)?)? + (&nll * weights.w_nll)?)?;
    let mut reg_value = 0.0;
    if active {
        if weights.lambda > 0.0 {
            let reg = penalty_t(&out.beta, reg_spec)?;
            total = (total + (&reg * weights.lambda)?)?;
            reg_value = scalar(&reg)?;
        } else {
            reg_value = scalar(&penalty_t(&out.beta.detach(), reg_spec)?)?;
        }
    }
    let breakdown = LossBreakdown::combine(scalar(&l1)?, scalar(&adv)?, scalar(&nll)?, reg_value, weights, active);
    Ok(GeneratorLoss { total, breakdown })
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Pooled score per batch entry, as plain numbers.
pub fn pooled_scores(scores: &Tensor) -> Result<Vec<f64>> {
    Ok(pooled(scores)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?)
}
