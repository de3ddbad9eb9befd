//! Log-gamma as a differentiable tensor op (CPU only).

use candle_core::{bail, CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};
use statrs::function::gamma::{digamma, ln_gamma as ln_gamma_f64};

fn map_storage(storage: &CpuStorage, layout: &Layout, f: fn(f64) -> f64, name: &str) -> Result<(CpuStorage, Shape)> {
    let Some((start, end)) = layout.contiguous_offsets() else {
        bail!("{name}: input must be contiguous");
    };
    let out = match storage {
        CpuStorage::F32(v) => CpuStorage::F32(v[start..end].iter().map(|x| f(f64::from(*x)) as f32).collect()),
        CpuStorage::F64(v) => CpuStorage::F64(v[start..end].iter().map(|x| f(*x)).collect()),
        _ => bail!("{name}: only f32 and f64 are supported"),
    };
    Ok((out, layout.shape().clone()))
}

struct LnGamma;

impl CustomOp1 for LnGamma {
    fn name(&self) -> &'static str {
        "ln_gamma"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        map_storage(storage, layout, ln_gamma_f64, "ln_gamma")
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad_res.mul(&arg.apply_op1_no_bwd(&Digamma)?)?))
    }
}

struct Digamma;

impl CustomOp1 for Digamma {
    fn name(&self) -> &'static str {
        "digamma"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        map_storage(storage, layout, digamma, "digamma")
    }
}

/// Elementwise `ln Γ(x)` for positive `x`, with gradient `ψ(x)`.
pub fn ln_gamma(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(LnGamma)
}
