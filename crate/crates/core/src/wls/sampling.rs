use rayon::prelude::*;

use super::{check_rows, TransformPosterior, WeightedProblem};
use crate::basis::DesignMatrix;
use crate::error::{Error, Result};
use crate::grid::{CoordField, MeanStdField};
use crate::rng::{normals, sample_key, Domain};

/// Per-voxel perturbation applied to μ before projecting with A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// μ + W^{-1/2} g = μ + σ ⊙ g. The sampled coefficients then have
    /// covariance A W⁻¹ Aᵀ.
    #[default]
    StdScaled,
    /// μ + W⁻¹ g = μ + σ² ⊙ g.
    VarianceScaled,
}

impl NoiseModel {
    #[inline]
    pub fn perturbation(self, std: f64, g: f64) -> f64 {
        match self {
            NoiseModel::StdScaled => std * g,
            NoiseModel::VarianceScaled => std * std * g,
        }
    }
}

/// Coefficient samples `A_j (μ_j + δ_j)`; `out[s][j]` has B entries.
///
/// Sample `s`, direction `j` draws its noise from the stream keyed
/// `(seed, s, j)`, position = mask scan index, so results do not depend on
/// `count` or on the thread schedule.
pub fn sample_coefficients(
    p: &TransformPosterior,
    phi: &DesignMatrix,
    field: &MeanStdField,
    count: usize,
    seed: u64,
    noise: NoiseModel,
) -> Result<Vec<[Vec<f64>; 3]>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    p.check_basis(phi)?;
    let m = check_rows(field, phi)?;
    let std = field.masked_std();
    let problem = WeightedProblem::new(phi);
    let weights: [Vec<f64>; 3] = std::array::from_fn(|j| {
        if p.weighted {
            std.channels[j].iter().map(|s| 1.0 / (s * s)).collect()
        } else {
            vec![1.0; m]
        }
    });
    Ok((0..count)
        .into_par_iter()
        .map(|s| {
            std::array::from_fn(|j| {
                let g = normals(seed, Domain::FieldSample, sample_key(s as u64, j), m);
                let delta: Vec<f64> = std.channels[j]
                    .iter()
                    .zip(&g)
                    .map(|(&sd, &gv)| noise.perturbation(sd, gv))
                    .collect();
                let d = &p.directions[j];
                let mut r = problem.weighted_rhs(&weights[j], &delta);
                d.factor.solve(&mut r);
                let mut coef = d.coef_mean.clone();
                for (slot, &col) in p.active.iter().enumerate() {
                    coef[col] += r[slot];
                }
                coef
            })
        })
        .collect())
}

/// Field samples φ A_j (μ_j + δ_j).
pub fn sample_fields(
    p: &TransformPosterior,
    phi: &DesignMatrix,
    field: &MeanStdField,
    count: usize,
    seed: u64,
    noise: NoiseModel,
) -> Result<Vec<CoordField>> {
    let coefs = sample_coefficients(p, phi, field, count, seed, noise)?;
    Ok(coefs
        .into_par_iter()
        .map(|c| CoordField {
            channels: std::array::from_fn(|j| phi.mul(&c[j])),
        })
        .collect())
}
