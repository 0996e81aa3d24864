//! Kernel-smoothed (non-parametric) transform estimates and their voxel
//! variances.
//!
//! All smoothing is a normalized convolution over the mask: with per-voxel
//! weights `w` (zero outside the mask and the grid),
//!
//! ```text
//! mean     = K ⋆ (w ⊙ μ) / (K ⋆ w)
//! variance = (K⊙K) ⋆ (w² ⊙ σ²) / (K ⋆ w)²
//! ```
//!
//! Precision mode uses `w = σ⁻²`; plain mode uses `w = 1`, which renormalizes
//! the taps clipped by the grid edge or the mask and reduces to `K ⋆ μ` and
//! `(K⊙K) ⋆ σ²` in the interior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoordField, Grid, Mask, MeanStdField};
use crate::metrics;
use crate::rng::{normals, sample_key, Domain};
use crate::wls::NoiseModel;

pub const DEFAULT_KERNEL_SIGMA_MM: f64 = 3.0;
pub const DEFAULT_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SmoothingKernel {
    /// Gaussian of standard deviation `sigma_mm`, cut at `truncation·sigma`.
    Gaussian { sigma_mm: f64, truncation: f64 },
    /// The same odd-length 1-D taps on every axis (renormalized to sum 1).
    Taps { taps: Vec<f64> },
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        SmoothingKernel::Gaussian {
            sigma_mm: DEFAULT_KERNEL_SIGMA_MM,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl SmoothingKernel {
    pub fn gaussian(sigma_mm: f64, truncation: f64) -> Result<Self> {
        if !(sigma_mm > 0.0 && truncation >= 0.0 && sigma_mm.is_finite() && truncation.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel sigma must be > 0 and truncation >= 0 (got {sigma_mm}, {truncation})"
            )));
        }
        Ok(SmoothingKernel::Gaussian { sigma_mm, truncation })
    }

    pub fn from_taps(taps: Vec<f64>) -> Result<Self> {
        if taps.len().is_multiple_of(2) || taps.iter().any(|t| !(*t >= 0.0)) || taps.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "taps must have odd length, be non-negative and not all zero".into(),
            ));
        }
        let asym = taps.iter().zip(taps.iter().rev()).any(|(a, b)| a != b);
        if asym {
            return Err(Error::InvalidArgument("taps must be symmetric".into()));
        }
        Ok(SmoothingKernel::Taps { taps })
    }

    /// δ-kernel: smoothing is the identity.
    pub fn identity() -> Self {
        SmoothingKernel::Taps { taps: vec![1.0] }
    }

    /// Normalized 1-D taps for an axis with the given voxel spacing.
    pub fn taps(&self, spacing_mm: f64) -> Vec<f64> {
        let raw = match self {
            SmoothingKernel::Gaussian { sigma_mm, truncation } => {
                let radius = ((truncation * sigma_mm) / spacing_mm + 1e-9).floor() as usize;
                let r = radius as isize;
                (-r..=r)
                    .map(|k| {
                        let x = k as f64 * spacing_mm;
                        (-x * x / (2.0 * sigma_mm * sigma_mm)).exp()
                    })
                    .collect::<Vec<_>>()
            }
            SmoothingKernel::Taps { taps } => taps.clone(),
        };
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|t| t / s).collect()
    }

    pub fn axis_taps(&self, grid: &Grid) -> [Vec<f64>; 3] {
        let sp = grid.spacing();
        std::array::from_fn(|a| self.taps(sp[a]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemonsMode {
    Plain,
    #[default]
    Precision,
}

/// Variance formula used in precision mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFormula {
    /// Variance of the precision-weighted estimator itself.
    #[default]
    SelfConsistent,
    /// (K⊙K) ⋆ σ², as for plain smoothing.
    PlainKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonParamPosterior {
    pub grid: Grid,
    pub mask: Mask,
    /// Smoothed mean over the mask, scan order.
    pub mean: CoordField,
    /// Voxel variance over the mask, scan order.
    pub variance: CoordField,
    pub mode: DemonsMode,
    pub variance_formula: VarianceFormula,
    pub kernel: SmoothingKernel,
}

/// Zero-padded separable correlation with symmetric taps.
pub(crate) fn convolve(data: &[f64], grid: &Grid, taps: &[Vec<f64>; 3]) -> Vec<f64> {
    let dims = grid.dims();
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let t = &taps[axis];
        if t.len() == 1 {
            if t[0] != 1.0 {
                cur.iter_mut().for_each(|v| *v *= t[0]);
            }
            continue;
        }
        let r = (t.len() / 2) as isize;
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let len = dims[axis] as isize;
        let src = &cur;
        let out: Vec<f64> = (0..cur.len())
            .into_par_iter()
            .with_min_len(4096)
            .map(|n| {
                let pos = grid.index3(n)[axis] as isize;
                let lo = (-r).max(-pos);
                let hi = r.min(len - 1 - pos);
                let mut acc = 0.0;
                for k in lo..=hi {
                    let idx = (n as isize + k * stride as isize) as usize;
                    acc += t[(k + r) as usize] * src[idx];
                }
                acc
            })
            .collect();
        cur = out;
    }
    cur
}

fn squared_taps(taps: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
    std::array::from_fn(|a| taps[a].iter().map(|t| t * t).collect())
}

struct Smoother<'a> {
    grid: Grid,
    mask_idx: Vec<usize>,
    taps: [Vec<f64>; 3],
    /// Per-direction full-grid weights (zero off-mask).
    weights: [Vec<f64>; 3],
    /// Per-direction K ⋆ w, full grid.
    denom: [Vec<f64>; 3],
    field: &'a MeanStdField,
}

impl<'a> Smoother<'a> {
    fn new(field: &'a MeanStdField, kernel: &SmoothingKernel, mode: DemonsMode) -> Result<Self> {
        let grid = field.grid;
        let mask_idx = field.mask.nonempty_indices()?;
        let taps = kernel.axis_taps(&grid);
        let weights: [Vec<f64>; 3] = std::array::from_fn(|j| {
            let mut w = vec![0.0; grid.len()];
            for &n in &mask_idx {
                w[n] = match mode {
                    DemonsMode::Plain => 1.0,
                    DemonsMode::Precision => field.std[j][n].powi(-2),
                };
            }
            w
        });
        let denom: [Vec<f64>; 3] = std::array::from_fn(|j| convolve(&weights[j], &grid, &taps));
        for d in &denom {
            if let Some(&n) = mask_idx.iter().find(|&&n| !(d[n] > 0.0)) {
                return Err(Error::EmptyNeighborhood(grid.index3(n)));
            }
        }
        Ok(Smoother {
            grid,
            mask_idx,
            taps,
            weights,
            denom,
            field,
        })
    }

    /// Normalized smoothing of full-grid values in direction `j`, returned
    /// over the mask.
    fn smooth(&self, j: usize, values: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = values.iter().zip(&self.weights[j]).map(|(v, w)| v * w).collect();
        let num = convolve(&weighted, &self.grid, &self.taps);
        self.mask_idx.iter().map(|&n| num[n] / self.denom[j][n]).collect()
    }

    /// (K⊙K) ⋆ (w² σ²) / (K ⋆ w)² over the mask.
    fn variance(&self, j: usize) -> Vec<f64> {
        let sq = squared_taps(&self.taps);
        let mut src = vec![0.0; self.grid.len()];
        for &n in &self.mask_idx {
            let w = self.weights[j][n];
            let s = self.field.std[j][n];
            src[n] = w * w * s * s;
        }
        let num = convolve(&src, &self.grid, &sq);
        self.mask_idx
            .iter()
            .map(|&n| num[n] / (self.denom[j][n] * self.denom[j][n]))
            .collect()
    }
}

/// Smoothed mean and voxel variance of the predicted field.
pub fn demons_fit(
    field: &MeanStdField,
    kernel: &SmoothingKernel,
    mode: DemonsMode,
    variance_formula: VarianceFormula,
) -> Result<NonParamPosterior> {
    let sm = Smoother::new(field, kernel, mode)?;
    let mean = CoordField {
        channels: std::array::from_fn(|j| sm.smooth(j, &field.mean[j])),
    };
    let variance = match (mode, variance_formula) {
        (DemonsMode::Precision, VarianceFormula::PlainKernel) => {
            let plain = Smoother::new(field, kernel, DemonsMode::Plain)?;
            CoordField {
                channels: std::array::from_fn(|j| plain.variance(j)),
            }
        }
        _ => CoordField {
            channels: std::array::from_fn(|j| sm.variance(j)),
        },
    };
    Ok(NonParamPosterior {
        grid: field.grid,
        mask: field.mask.clone(),
        mean,
        variance,
        mode,
        variance_formula,
        kernel: kernel.clone(),
    })
}

/// Smoothed samples of the perturbed field μ + δ.
pub fn demons_sample(
    field: &MeanStdField,
    kernel: &SmoothingKernel,
    mode: DemonsMode,
    count: usize,
    seed: u64,
    noise: NoiseModel,
) -> Result<Vec<CoordField>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let sm = Smoother::new(field, kernel, mode)?;
    let m = sm.mask_idx.len();
    Ok((0..count)
        .into_par_iter()
        .map(|s| CoordField {
            channels: std::array::from_fn(|j| {
                let g = normals(seed, Domain::DemonsSample, sample_key(s as u64, j), m);
                let mut perturbed = field.mean[j].clone();
                for (&n, gv) in sm.mask_idx.iter().zip(&g) {
                    perturbed[n] += noise.perturbation(field.std[j][n], *gv);
                }
                sm.smooth(j, &perturbed)
            }),
        })
        .collect())
}

/// Summed 3-channel variance against ‖truth − mean‖² over the mask:
/// returns (spearman, pearson).
pub fn demons_variance_error_correlation(truth: &CoordField, posterior: &NonParamPosterior) -> Result<(f64, f64)> {
    if truth.len() != posterior.mean.len() {
        return Err(Error::LengthMismatch {
            expected: posterior.mean.len(),
            actual: truth.len(),
        });
    }
    let var: Vec<f64> = (0..truth.len())
        .map(|m| (0..3).map(|j| posterior.variance.channels[j][m]).sum())
        .collect();
    let err: Vec<f64> = (0..truth.len())
        .map(|m| {
            (0..3)
                .map(|j| (truth.channels[j][m] - posterior.mean.channels[j][m]).powi(2))
                .sum()
        })
        .collect();
    Ok((metrics::spearman(&var, &err)?, metrics::pearson(&var, &err)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(grid: Grid, mask: Mask, f: impl Fn(usize, usize) -> (f64, f64)) -> MeanStdField {
        let mean = std::array::from_fn(|j| (0..grid.len()).map(|n| f(n, j).0).collect());
        let std = std::array::from_fn(|j| (0..grid.len()).map(|n| f(n, j).1).collect());
        MeanStdField::new(grid, mean, std, mask).unwrap()
    }

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let k = SmoothingKernel::default();
        let t = k.taps(1.0);
        assert_eq!(t.len(), 19);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.iter().zip(t.iter().rev()).all(|(a, b)| a == b));
        assert_eq!(k.taps(2.0).len(), 9);
        assert_eq!(k.taps(10.0).len(), 1);
    }

    #[test]
    fn identity_kernel_is_a_no_op() {
        let g = Grid::unit([4, 3, 5]).unwrap();
        let f = field(g, Mask::full(g), |n, j| {
            ((n * 7 + j) as f64 % 5.0, 0.5 + (n % 3) as f64)
        });
        for mode in [DemonsMode::Plain, DemonsMode::Precision] {
            let p = demons_fit(&f, &SmoothingKernel::identity(), mode, VarianceFormula::SelfConsistent).unwrap();
            for j in 0..3 {
                assert_eq!(p.mean.channels[j], f.masked_mean().channels[j]);
                for (v, s) in p.variance.channels[j].iter().zip(&f.masked_std().channels[j]) {
                    assert!((v - s * s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_field_is_reproduced() {
        let g = Grid::new([6, 5, 4], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
        let mask = Mask::from_fn(g, |i| i[0] > 0);
        let f = field(g, mask, |n, _| (3.25, 0.3 + (n % 5) as f64));
        for mode in [DemonsMode::Plain, DemonsMode::Precision] {
            let p = demons_fit(
                &f,
                &SmoothingKernel::gaussian(2.0, 3.0).unwrap(),
                mode,
                Default::default(),
            )
            .unwrap();
            for ch in &p.mean.channels {
                assert!(ch.iter().all(|v| (v - 3.25).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn sample_count_zero_rejected() {
        let g = Grid::unit([2, 2, 2]).unwrap();
        let f = field(g, Mask::full(g), |_, _| (0.0, 1.0));
        assert!(demons_sample(
            &f,
            &SmoothingKernel::identity(),
            DemonsMode::Plain,
            0,
            1,
            NoiseModel::StdScaled
        )
        .is_err());
    }

    #[test]
    fn bad_taps_rejected() {
        assert!(SmoothingKernel::from_taps(vec![0.5, 0.5]).is_err());
        assert!(SmoothingKernel::from_taps(vec![0.2, 0.5, 0.3]).is_err());
        assert!(SmoothingKernel::from_taps(vec![0.25, 0.5, 0.25]).is_ok());
    }
}
