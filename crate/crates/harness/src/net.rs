//! Encoder-decoder generator with reconstruction/scale/shape heads, and a
//! conditional patch discriminator.
//!
//! Generator: a 3x3 input convolution, then `levels - 1` stages of (3x3 stride-2
//! convolution, 3x3 convolution) halving the resolution and doubling the width.
//! The decoder upsamples (nearest), concatenates the matching encoder feature
//! map and applies a 3x3 convolution. Three 1x1 heads read the full-resolution
//! features. LeakyReLU(0.2) everywhere, no normalization layers.
//!
//! Discriminator: three 4x4 stride-2 blocks, one 4x4 stride-1 block and a 4x4
//! stride-1 output convolution, all with padding 1. A 64x64 input gives a 6x6
//! score map and 32x32 gives 2x2 (see [`score_map_size`]).

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, VarMap};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uar_core::gnd::{GndParams, DEFAULT_BETA_MIN};
use uar_core::ImageMap;

use crate::error::{Error, Result};
use crate::tensors::{images_to_tensor, tensor_to_images, tensor_to_maps};

const SLOPE: f64 = 0.2;
pub const DEFAULT_ALPHA_MIN: f64 = 1e-3;
/// Scale and shape the heads start from (a Gaussian with std ~0.07); the head
/// biases are set through the inverse softplus.
pub const INITIAL_ALPHA: f64 = 0.1;
pub const INITIAL_BETA: f64 = 2.0;

/// Architecture knobs. Image size lives in the training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub base_width: usize,
    pub levels: usize,
    pub disc_width: usize,
    pub conditional: bool,
    pub alpha_min: f64,
    pub beta_min: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            base_width: 32,
            levels: 4,
            disc_width: 32,
            conditional: true,
            alpha_min: DEFAULT_ALPHA_MIN,
            beta_min: DEFAULT_BETA_MIN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.base_width == 0 || self.disc_width == 0 || self.levels == 0 {
            return bad("channels, widths and levels must be positive".into());
        }
        if self.levels > 8 {
            return bad(format!("at most 8 levels, got {}", self.levels));
        }
        if !(self.alpha_min > 0.0 && self.beta_min > 0.0) {
            return bad("alpha_min and beta_min must be positive".into());
        }
        let factor = 1usize << (self.levels - 1);
        if image_size == 0 || !image_size.is_multiple_of(factor) {
            return bad(format!("image size {image_size} must be a positive multiple of {factor}"));
        }
        if score_map_size(image_size).is_none() {
            return bad(format!("image size {image_size} is too small for the discriminator"));
        }
        Ok(())
    }

    fn disc_in_channels(&self) -> usize {
        if self.conditional { 2 * self.channels } else { self.channels }
    }
}

/// Side length of the discriminator's score map for a square input.
pub fn score_map_size(image_size: usize) -> Option<usize> {
    let conv = |s: usize, stride: usize| (s + 2).checked_sub(4).map(|v| v / stride + 1);
    let mut s = image_size;
    for _ in 0..3 {
        s = conv(s, 2)?;
    }
    s = conv(s, 1)?;
    conv(s, 1).filter(|v| *v > 0)
}

/// Draws parameters from a seeded stream and registers them in a [`VarMap`].
struct ParamInit {
    rng: ChaCha8Rng,
    varmap: VarMap,
    dtype: DType,
}

impl ParamInit {
    fn new(seed: u64, dtype: DType) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), varmap: VarMap::new(), dtype }
    }

    /// Uniform on `offset +- bound`.
    fn var(&mut self, name: String, shape: &[usize], bound: f64, offset: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| offset + self.rng.random_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.varmap.data().lock().expect("varmap lock").insert(name, var);
        Ok(out)
    }

    /// Uniform `+-1/sqrt(fan_in)` for weights and bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Result<Conv2d> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = self.var(format!("{name}.weight"), &[cout, cin, k, k], bound, 0.0)?;
        let b = self.var(format!("{name}.bias"), &[cout], bound, 0.0)?;
        Ok(Conv2d::new(w, Some(b), Conv2dConfig { padding, stride, ..Default::default() }))
    }

    /// 1x1 single-output head with a fixed starting bias.
    fn head(&mut self, name: &str, cin: usize, bias: f64) -> Result<Conv2d> {
        let w = self.var(format!("{name}.weight"), &[1, cin, 1, 1], 1.0 / (cin as f64).sqrt(), 0.0)?;
        let b = self.var(format!("{name}.bias"), &[1], 0.0, bias)?;
        Ok(Conv2d::new(w, Some(b), Conv2dConfig::default()))
    }
}

fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, SLOPE)?)
}

/// `ln(1 + e^x)`, computed as `max(x, 0) + ln(1 + e^-|x|)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 { y } else { y.exp_m1().ln() }
}

fn check_input(x: &Tensor, channels: usize, size: usize) -> Result<()> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != channels || dims[2] != size || dims[3] != size {
        return Err(Error::Dimension(format!("expected B x {channels} x {size} x {size}, got {dims:?}")));
    }
    Ok(())
}

/// Batched generator output: reconstruction `B x C x H x W`, scale and shape `B x 1 x H x W`.
#[derive(Debug, Clone)]
pub struct GeneratorTensors {
    pub reconstruction: Tensor,
    pub alpha: Tensor,
    pub beta: Tensor,
}

/// Output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput {
    pub reconstruction: ImageMap,
    pub params: GndParams,
}

pub struct Generator {
    config: ModelConfig,
    image_size: usize,
    varmap: VarMap,
    input: Conv2d,
    down: Vec<(Conv2d, Conv2d)>,
    up: Vec<Conv2d>,
    head_recon: Conv2d,
    head_alpha: Conv2d,
    head_beta: Conv2d,
}

impl Generator {
    pub fn new(config: &ModelConfig, image_size: usize, seed: u64, dtype: DType) -> Result<Self> {
        config.validate(image_size)?;
        let mut p = ParamInit::new(seed, dtype);
        let width = |i: usize| config.base_width << i;
        let input = p.conv("in", config.channels, width(0), 3, 1, 1)?;
        let mut down = Vec::new();
        for i in 1..config.levels {
            let pool = p.conv(&format!("down{i}"), width(i - 1), width(i), 3, 2, 1)?;
            let conv = p.conv(&format!("enc{i}"), width(i), width(i), 3, 1, 1)?;
            down.push((pool, conv));
        }
        let mut up = Vec::new();
        for i in (1..config.levels).rev() {
            up.push(p.conv(&format!("up{i}"), width(i) + width(i - 1), width(i - 1), 3, 1, 1)?);
        }
        let head_recon = p.conv("head_recon", width(0), config.channels, 1, 1, 0)?;
        let head_alpha = p.head("head_alpha", width(0), inverse_softplus(INITIAL_ALPHA - config.alpha_min))?;
        let head_beta = p.head("head_beta", width(0), inverse_softplus(INITIAL_BETA - config.beta_min))?;
        Ok(Self {
            config: config.clone(),
            image_size,
            varmap: p.varmap,
            input,
            down,
            up,
            head_recon,
            head_alpha,
            head_beta,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn varmap_mut(&mut self) -> &mut VarMap {
        &mut self.varmap
    }

    /// Shared trunk: full-resolution features before the heads.
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = lrelu(&self.input.forward(x)?)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (pool, conv) in &self.down {
            skips.push(h.clone());
            h = lrelu(&pool.forward(&h)?)?;
            h = lrelu(&conv.forward(&h)?)?;
        }
        for (conv, skip) in self.up.iter().zip(skips.iter().rev()) {
            let (_, _, sh, sw) = skip.dims4()?;
            let upsampled = h.upsample_nearest2d(sh, sw)?;
            h = lrelu(&conv.forward(&Tensor::cat(&[&upsampled, skip], 1)?)?)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<GeneratorTensors> {
        check_input(x, self.config.channels, self.image_size)?;
        let h = self.features(x)?;
        Ok(GeneratorTensors {
            reconstruction: candle_nn::ops::sigmoid(&self.head_recon.forward(&h)?)?,
            alpha: (softplus(&self.head_alpha.forward(&h)?)? + self.config.alpha_min)?,
            beta: (softplus(&self.head_beta.forward(&h)?)? + self.config.beta_min)?,
        })
    }

    /// Runs a batch of images and converts back to arrays.
    pub fn predict(&self, images: &[&ImageMap]) -> Result<Vec<GeneratorOutput>> {
        let x = images_to_tensor(images, self.dtype())?;
        let out = self.forward(&x)?;
        let recon = tensor_to_images(&out.reconstruction)?;
        let alpha = tensor_to_maps(&out.alpha)?;
        let beta = tensor_to_maps(&out.beta)?;
        recon
            .into_iter()
            .zip(alpha)
            .zip(beta)
            .map(|((reconstruction, alpha), beta)| {
                // f32 rounding can land a hair under the floor.
                let beta = beta.mapv(|b| b.max(self.config.beta_min));
                let alpha = alpha.mapv(|a| a.max(f64::MIN_POSITIVE));
                let params = GndParams::with_beta_min(alpha, beta, self.config.beta_min)?;
                Ok(GeneratorOutput { reconstruction: reconstruction.mapv(|v| v.clamp(0.0, 1.0)), params })
            })
            .collect()
    }

    pub fn dtype(&self) -> DType {
        self.input.weight().dtype()
    }

    /// Sets the named head's weight and bias to zero.
    pub fn zero_head(&self, head: Head) -> Result<()> {
        let prefix = match head {
            Head::Reconstruction => "head_recon",
            Head::Alpha => "head_alpha",
            Head::Beta => "head_beta",
        };
        let data = self.varmap.data().lock().expect("varmap lock");
        for suffix in ["weight", "bias"] {
            let var = &data[&format!("{prefix}.{suffix}")];
            var.set(&var.as_tensor().zeros_like()?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Reconstruction,
    Alpha,
    Beta,
}

/// Realness scores of one input, `h x w` with `h, w` from [`score_map_size`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreMap {
    pub scores: Array2<f64>,
}

pub struct Discriminator {
    config: ModelConfig,
    image_size: usize,
    varmap: VarMap,
    blocks: Vec<Conv2d>,
    output: Conv2d,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, image_size: usize, seed: u64, dtype: DType) -> Result<Self> {
        config.validate(image_size)?;
        let mut p = ParamInit::new(seed, dtype);
        let w = config.disc_width;
        let blocks = vec![
            p.conv("block1", config.disc_in_channels(), w, 4, 2, 1)?,
            p.conv("block2", w, 2 * w, 4, 2, 1)?,
            p.conv("block3", 2 * w, 4 * w, 4, 2, 1)?,
            p.conv("block4", 4 * w, 8 * w, 4, 1, 1)?,
        ];
        let output = p.conv("out", 8 * w, 1, 4, 1, 1)?;
        Ok(Self { config: config.clone(), image_size, varmap: p.varmap, blocks, output })
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn varmap_mut(&mut self) -> &mut VarMap {
        &mut self.varmap
    }

    /// Scores `B x 1 x h x w` for candidate targets `x_b`, conditioned on `x_a`
    /// when the model is conditional (otherwise `x_a` is ignored).
    pub fn forward(&self, x_a: &Tensor, x_b: &Tensor) -> Result<Tensor> {
        check_input(x_b, self.config.channels, self.image_size)?;
        let mut h = if self.config.conditional {
            check_input(x_a, self.config.channels, self.image_size)?;
            Tensor::cat(&[x_a, x_b], 1)?
        } else {
            x_b.clone()
        };
        for block in &self.blocks {
            h = lrelu(&block.forward(&h)?)?;
        }
        Ok(self.output.forward(&h)?)
    }

    pub fn score_map(&self, x_a: &Array3<f64>, x_b: &Array3<f64>) -> Result<PatchScoreMap> {
        let dtype = self.output.weight().dtype();
        let s = self.forward(&images_to_tensor(&[x_a], dtype)?, &images_to_tensor(&[x_b], dtype)?)?;
        let scores = tensor_to_maps(&s)?.remove(0);
        Ok(PatchScoreMap { scores })
    }
}
