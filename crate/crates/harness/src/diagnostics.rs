//! Statistics on predicted uncertainty maps.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use uar_core::regularizers::{penalty, RegularizerSpec};

use crate::error::{Error, Result};
use crate::eval::SampleEval;

/// Statistics for one evaluated sample. `None` marks a statistic whose inputs
/// (mask or ground truth) were unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub artifact_ratio: Option<f64>,
    pub rank_correlation: Option<f64>,
    pub beta_tv: f64,
}

/// Mean of `sigma2` inside the mask over the mean outside it. `None` when either
/// side is empty or the outside mean is zero.
pub fn artifact_ratio(sigma2: &Array2<f64>, mask: &Array2<bool>) -> Result<Option<f64>> {
    if sigma2.dim() != mask.dim() {
        return Err(Error::Dimension(format!("sigma2 {:?} vs mask {:?}", sigma2.dim(), mask.dim())));
    }
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (v, m) in sigma2.iter().zip(mask.iter()) {
        if *m {
            sum_in += v;
            n_in += 1;
        } else {
            sum_out += v;
            n_out += 1;
        }
    }
    if n_in == 0 || n_out == 0 || sum_out == 0.0 {
        return Ok(None);
    }
    Ok(Some((sum_in / n_in as f64) / (sum_out / n_out as f64)))
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation. `None` for fewer than two points, mismatched
/// lengths, non-finite input, or a constant side.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 || a.iter().chain(b).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Isotropic total variation of a shape map (default epsilon).
pub fn beta_tv(beta: &Array2<f64>) -> Result<f64> {
    Ok(penalty(beta, &RegularizerSpec::default())?)
}

pub fn uncertainty_diagnostics(sample: &SampleEval, truth_variance: Option<&Array2<f64>>) -> Result<Diagnostics> {
    let artifact_ratio = match &sample.mask {
        Some(mask) => artifact_ratio(&sample.sigma2, mask)?,
        None => None,
    };
    let rank_correlation = match truth_variance {
        Some(t) if t.dim() == sample.sigma2.dim() => {
            let predicted: Vec<f64> = sample.sigma2.iter().copied().collect();
            spearman(&predicted, &t.iter().copied().collect::<Vec<_>>())
        }
        Some(t) => return Err(Error::Dimension(format!("truth {:?} vs sigma2 {:?}", t.dim(), sample.sigma2.dim()))),
        None => None,
    };
    Ok(Diagnostics { artifact_ratio, rank_correlation, beta_tv: beta_tv(&sample.beta)? })
}

/// Spearman correlation pooled over every pixel of every sample.
pub fn pooled_rank_correlation(samples: &[SampleEval], truths: &[&Array2<f64>]) -> Result<Option<f64>> {
    if samples.len() != truths.len() {
        return Err(Error::Dimension(format!("{} samples vs {} truth maps", samples.len(), truths.len())));
    }
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (s, t) in samples.iter().zip(truths) {
        if s.sigma2.dim() != t.dim() {
            return Err(Error::Dimension(format!("truth {:?} vs sigma2 {:?}", t.dim(), s.sigma2.dim())));
        }
        predicted.extend(s.sigma2.iter().copied());
        truth.extend(t.iter().copied());
    }
    Ok(spearman(&predicted, &truth))
}
