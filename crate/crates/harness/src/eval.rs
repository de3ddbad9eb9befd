//! Evaluation of a trained generator, optionally on corrupted inputs.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use uar_core::corruptions::{corrupt, corruption_mask, CorruptionSpec};
use uar_core::dataio::{export_float_map, save_image, PairedSample};
use uar_core::gnd::gnd_variance;
use uar_core::metrics::{image_metrics, ImageMetrics, MetricReport, PerceptualBackend};
use uar_core::ImageMap;

use crate::checkpoint::{load_generator, CheckpointMeta};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::net::Generator;

const PREDICT_BATCH: usize = 8;

#[derive(Default)]
pub struct EvalOptions<'a> {
    /// Applied to each source image; sample `i` uses seed `spec.seed + i`.
    pub corruption: Option<&'a CorruptionSpec>,
    /// Per-sample maps and images are written here when set.
    pub export_dir: Option<&'a Path>,
    pub perceptual: Option<&'a dyn PerceptualBackend>,
}

#[derive(Debug, Clone)]
pub struct SampleEval {
    pub id: String,
    pub metrics: ImageMetrics,
    /// Generator input after corruption.
    pub input: ImageMap,
    pub reconstruction: ImageMap,
    /// Per-pixel squared residual norm over channels, `||x - x_hat||^2`.
    pub residual_sq: Array2<f64>,
    pub sigma2: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    /// Region touched by an artifact corruption.
    pub mask: Option<Array2<bool>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub samples: Vec<SampleEval>,
}

/// On-disk summary written next to the per-sample exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub corruption: Option<CorruptionSpec>,
    pub samples: Vec<SampleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub id: String,
    pub metrics: ImageMetrics,
    pub dir: PathBuf,
}

fn sample_spec(spec: &CorruptionSpec, index: usize) -> CorruptionSpec {
    CorruptionSpec { seed: spec.seed.wrapping_add(index as u64), ..*spec }
}

pub fn evaluate(generator: &Generator, samples: &[PairedSample], options: &EvalOptions<'_>) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(uar_core::Error::Domain("evaluation set is empty".into()).into());
    }
    let inputs = samples
        .iter()
        .enumerate()
        .map(|(i, s)| match options.corruption {
            Some(spec) => corrupt(&s.x_a, &sample_spec(spec, i)),
            None => Ok(s.x_a.clone()),
        })
        .collect::<uar_core::Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(samples.len());
    for (chunk_idx, chunk) in inputs.chunks(PREDICT_BATCH).enumerate() {
        let refs: Vec<&ImageMap> = chunk.iter().collect();
        let predictions = generator.predict(&refs)?;
        for (k, pred) in predictions.into_iter().enumerate() {
            let i = chunk_idx * PREDICT_BATCH + k;
            let sample = &samples[i];
            let (h, w, _) = sample.x_b.dim();
            let mask = match options.corruption {
                Some(spec) if spec.is_artifact() => Some(corruption_mask(spec, h, w)?),
                _ => None,
            };
            let metrics = image_metrics(sample.x_b.view(), pred.reconstruction.view(), options.perceptual)?;
            let residual_sq = (&sample.x_b - &pred.reconstruction).mapv(|v| v * v).sum_axis(Axis(2));
            let sigma2 = gnd_variance(&pred.params)?.variance;
            out.push(SampleEval {
                id: sample.id.clone(),
                metrics,
                input: inputs[i].clone(),
                reconstruction: pred.reconstruction,
                residual_sq,
                sigma2,
                alpha: pred.params.alpha,
                beta: pred.params.beta,
                mask,
            });
        }
    }
    let report = MetricReport::aggregate(&out.iter().map(|s| s.metrics).collect::<Vec<_>>())?;
    let evaluation = Evaluation { report, samples: out };
    if let Some(dir) = options.export_dir {
        export(&evaluation, options.corruption, dir)?;
    }
    Ok(evaluation)
}

/// Loads a checkpoint (checking it against `config` when given) and evaluates.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    config: Option<&TrainConfig>,
    samples: &[PairedSample],
    options: &EvalOptions<'_>,
) -> Result<(Evaluation, CheckpointMeta)> {
    let (generator, meta) = load_generator(checkpoint, config)?;
    Ok((evaluate(&generator, samples, options)?, meta))
}

/// File-system-safe directory name for a sample id.
fn sample_dir_name(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:05}-{clean}")
}

fn as_f32(map: &Array2<f64>) -> Array2<f32> {
    map.mapv(|v| v as f32)
}

fn export(evaluation: &Evaluation, corruption: Option<&CorruptionSpec>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut summaries = Vec::with_capacity(evaluation.samples.len());
    for (i, s) in evaluation.samples.iter().enumerate() {
        let sub = dir.join(sample_dir_name(i, &s.id));
        fs::create_dir_all(&sub)?;
        save_image(&s.reconstruction, &sub.join("reconstruction.png"))?;
        save_image(&s.input, &sub.join("input.png"))?;
        export_float_map(&as_f32(&s.residual_sq), &sub.join("residual_sq.f32"))?;
        export_float_map(&as_f32(&s.sigma2), &sub.join("sigma2.f32"))?;
        export_float_map(&as_f32(&s.alpha), &sub.join("alpha.f32"))?;
        export_float_map(&as_f32(&s.beta), &sub.join("beta.f32"))?;
        if let Some(mask) = &s.mask {
            let m = mask.mapv(|b| if b { 1.0f32 } else { 0.0 });
            export_float_map(&m, &sub.join("corruption_mask.f32"))?;
        }
        summaries.push(SampleSummary { id: s.id.clone(), metrics: s.metrics, dir: sub });
    }
    let summary = EvalSummary { report: evaluation.report, corruption: corruption.copied(), samples: summaries };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Stacks the per-sample maps of an evaluation, e.g. for pooled statistics.
pub fn stack_maps<'a>(maps: impl IntoIterator<Item = &'a Array2<f64>>) -> Vec<f64> {
    maps.into_iter().flat_map(|m| m.iter().copied()).collect()
}
