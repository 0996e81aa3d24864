//! Evaluation statistics (Dice, Pearson, Spearman), sample summaries and
//! the training-loss evaluators in [`losses`].

pub mod losses;

use crate::error::{Error, Result};
use crate::grid::{CoordField, LabelVolume, Mask, MeanStdField};

/// Floor applied to summarized standard deviations (mm).
pub const STD_FLOOR: f64 = 1e-6;

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Per-label and mean Dice.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub per_label: Vec<(u16, f64)>,
    /// Requested labels absent from both volumes.
    pub skipped: Vec<u16>,
    /// Mean over included non-background labels.
    pub mean: f64,
}

/// Dice between two segmentations on the same grid. With `labels = None`
/// every non-background label present in either volume is scored.
pub fn dice_score(a: &LabelVolume, b: &LabelVolume, labels: Option<&[u16]>) -> Result<DiceReport> {
    a.grid.ensure_same(&b.grid, "dice operands")?;
    let wanted: Vec<u16> = match labels {
        Some(l) => {
            let mut l = l.to_vec();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => {
            let mut l: Vec<u16> = a.label_set().iter().chain(b.label_set()).copied().collect();
            l.sort_unstable();
            l.dedup();
            l.retain(|&x| x != 0);
            l
        }
    };
    let mut per_label = Vec::new();
    let mut skipped = Vec::new();
    for &lab in &wanted {
        let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
        for (&x, &y) in a.labels().iter().zip(b.labels()) {
            let (ia, ib) = (x == lab, y == lab);
            na += ia as usize;
            nb += ib as usize;
            both += (ia && ib) as usize;
        }
        if na + nb == 0 {
            skipped.push(lab);
        } else {
            per_label.push((lab, 2.0 * both as f64 / (na + nb) as f64));
        }
    }
    let scored: Vec<f64> = per_label.iter().filter(|(l, _)| *l != 0).map(|(_, d)| *d).collect();
    if scored.is_empty() {
        return Err(Error::EmptyLabelList);
    }
    let mean = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(DiceReport {
        per_label,
        skipped,
        mean,
    })
}

/// Mean and sample standard deviation (divisor S−1) of S field samples.
/// Standard deviations are floored at [`STD_FLOOR`]. Background voxels get
/// mean 0 and std 1.
pub fn summarize_samples(samples: &[CoordField], mask: &Mask) -> Result<MeanStdField> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: samples.len(),
        });
    }
    let m = mask.count();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::InconsistentSamples);
    }
    let s = samples.len() as f64;
    let mut mean = CoordField::zeros(m);
    let mut std = CoordField::zeros(m);
    for j in 0..3 {
        for i in 0..m {
            let mu = samples.iter().map(|f| f.channels[j][i]).sum::<f64>() / s;
            let var = samples.iter().map(|f| (f.channels[j][i] - mu).powi(2)).sum::<f64>() / (s - 1.0);
            mean.channels[j][i] = mu;
            std.channels[j][i] = var.sqrt().max(STD_FLOOR);
        }
    }
    MeanStdField::new(
        mask.grid,
        mean.scatter(mask, 0.0)?,
        std.scatter(mask, 1.0)?,
        mask.clone(),
    )
}

/// Per-voxel summed variance and squared coordinate error over the mask.
pub fn variance_and_squared_error(field: &MeanStdField, truth: &CoordField) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean = field.masked_mean();
    let std = field.masked_std();
    if truth.len() != mean.len() {
        return Err(Error::LengthMismatch {
            expected: mean.len(),
            actual: truth.len(),
        });
    }
    let var = (0..mean.len())
        .map(|m| (0..3).map(|j| std.channels[j][m].powi(2)).sum())
        .collect();
    let err = (0..mean.len())
        .map(|m| {
            (0..3)
                .map(|j| (mean.channels[j][m] - truth.channels[j][m]).powi(2))
                .sum()
        })
        .collect();
    Ok((var, err))
}

/// Formats like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    const P: i32 = 9;
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `name<TAB>value` lines.
pub fn report<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    rows.into_iter()
        .map(|(k, v)| format!("{k}\t{}\n", format_sig9(v)))
        .collect()
}
