//! Forward evaluators of the coordinate-regression training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoordField, Grid, LabelVolume, Mask};

pub const MASK_CE_WEIGHT: f64 = 0.25;
pub const MASK_DICE_WEIGHT: f64 = 0.75;
/// Probabilities are clamped to [PROB_CLAMP, 1 − PROB_CLAMP] before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_mask: f64,
    pub lambda_seg: f64,
    pub lambda_uncer: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mask: 0.5,
            lambda_seg: 5.0,
            lambda_uncer: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_mask: f64, lambda_seg: f64, lambda_uncer: f64) -> Result<Self> {
        if [lambda_mask, lambda_seg, lambda_uncer].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(LossWeights {
            lambda_mask,
            lambda_seg,
            lambda_uncer,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Likelihood {
    #[default]
    Gaussian,
    Laplace,
}

/// Per-voxel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    pub grid: Grid,
    probs: Vec<f64>,
}

impl MaskPrediction {
    pub fn new(grid: Grid, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: probs.len(),
            });
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("mask probabilities must lie in [0, 1]".into()));
        }
        Ok(MaskPrediction { grid, probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn check_pair(a: &CoordField, b: &CoordField) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(a.len())
}

/// Masked mean of ‖d − pred‖² (L2) or ‖d − pred‖₁ (L1). Both fields are
/// over the mask in scan order.
pub fn loss_coord(pred: &CoordField, truth: &CoordField, norm: Norm) -> Result<f64> {
    let m = check_pair(pred, truth)?;
    let total: f64 = (0..m)
        .map(|i| {
            (0..3)
                .map(|j| {
                    let r = truth.channels[j][i] - pred.channels[j][i];
                    match norm {
                        Norm::L2 => r * r,
                        Norm::L1 => r.abs(),
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / m as f64)
}

fn soft_dice(p: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for (pv, tv) in p {
        inter += pv * tv;
        sp += pv;
        st += tv;
    }
    if sp + st == 0.0 {
        1.0
    } else {
        2.0 * inter / (sp + st)
    }
}

/// 0.25 · binary cross-entropy + 0.75 · soft-Dice loss, both over the two
/// one-hot classes (foreground, background) and all voxels.
pub fn loss_mask(pred: &MaskPrediction, truth: &Mask) -> Result<f64> {
    pred.grid.ensure_same(&truth.grid, "mask loss")?;
    let n = pred.probs.len() as f64;
    let ce: f64 = pred
        .probs
        .iter()
        .zip(truth.values())
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n;
    let t = || truth.values().iter().map(|&t| if t { 1.0 } else { 0.0 });
    let fg = soft_dice(pred.probs.iter().copied().zip(t()));
    let bg = soft_dice(pred.probs.iter().map(|p| 1.0 - p).zip(t().map(|v| 1.0 - v)));
    let dice_loss = 1.0 - 0.5 * (fg + bg);
    Ok(MASK_CE_WEIGHT * ce + MASK_DICE_WEIGHT * dice_loss)
}

fn seg_labels(a: &LabelVolume, b: &LabelVolume, mask: &Mask) -> Result<Vec<u16>> {
    let mut l: Vec<u16> = mask
        .indices()
        .into_iter()
        .flat_map(|n| [a.labels()[n], b.labels()[n]])
        .filter(|&x| x != 0)
        .collect();
    l.sort_unstable();
    l.dedup();
    if l.is_empty() {
        return Err(Error::NoCommonLabels);
    }
    Ok(l)
}

/// Mean over non-background labels of (1 − Dice) inside the mask.
pub fn loss_seg(warped: &LabelVolume, truth: &LabelVolume, mask: &Mask) -> Result<f64> {
    warped.grid.ensure_same(&truth.grid, "segmentation loss")?;
    warped.grid.ensure_same(&mask.grid, "segmentation loss mask")?;
    let labels = seg_labels(warped, truth, mask)?;
    let idx = mask.indices();
    let total: f64 = labels
        .iter()
        .map(|&lab| {
            let d = soft_dice(idx.iter().map(|&n| {
                (
                    (warped.labels()[n] == lab) as u8 as f64,
                    (truth.labels()[n] == lab) as u8 as f64,
                )
            }));
            1.0 - d
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Soft variant: `probs[l]` holds full-grid probabilities of `labels[l]`.
pub fn loss_seg_soft(probs: &[Vec<f64>], labels: &[u16], truth: &LabelVolume, mask: &Mask) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: probs.len(),
        });
    }
    let idx = mask.indices();
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, &lab) in probs.iter().zip(labels) {
        if lab == 0 {
            continue;
        }
        if p.len() != truth.grid.len() {
            return Err(Error::LengthMismatch {
                expected: truth.grid.len(),
                actual: p.len(),
            });
        }
        let d = soft_dice(idx.iter().map(|&n| (p[n], (truth.labels()[n] == lab) as u8 as f64)));
        total += 1.0 - d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoCommonLabels);
    }
    Ok(total / count as f64)
}

/// Negative log-likelihood of the truth under per-voxel Gaussian (or
/// Laplace, scale b = σ̂) predictions, averaged over masked voxels.
pub fn loss_uncer(pred_mean: &CoordField, pred_std: &CoordField, truth: &CoordField, dist: Likelihood) -> Result<f64> {
    let m = check_pair(pred_mean, truth)?;
    check_pair(pred_std, truth)?;
    let mut total = 0.0;
    for j in 0..3 {
        for i in 0..m {
            let s = pred_std.channels[j][i];
            if !(s > 0.0) {
                return Err(Error::NonPositiveStd { voxel: i, direction: j });
            }
            let r = truth.channels[j][i] - pred_mean.channels[j][i];
            total += match dist {
                Likelihood::Gaussian => 0.5 * (r * r / (s * s) + (s * s).ln()),
                Likelihood::Laplace => r.abs() / s + (2.0 * s).ln(),
            };
        }
    }
    Ok(total / m as f64)
}

/// Std from a predicted log-variance.
pub fn std_from_log_variance(log_var: f64) -> f64 {
    (0.5 * log_var).exp()
}

/// Individual loss terms; `None` drops a term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub coord: f64,
    pub mask: Option<f64>,
    pub seg: Option<f64>,
    pub uncer: Option<f64>,
}

pub fn loss_total(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.coord
        + parts.mask.map_or(0.0, |v| w.lambda_mask * v)
        + parts.seg.map_or(0.0, |v| w.lambda_seg * v)
        + parts.uncer.map_or(0.0, |v| w.lambda_uncer * v)
}
