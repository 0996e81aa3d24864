//! Leading eigenpairs of the coefficient covariance by randomized range
//! finding with a Rayleigh-Ritz step. After a fixed number of power
//! iterations the subspace keeps being refined until the leading Ritz
//! residuals fall below a relative tolerance.
//!
//! The covariance is only touched through `v ↦ c^Σ v` (two triangular
//! solves per application), so nothing B×B is ever formed.

use rayon::prelude::*;

use super::TransformPosterior;
use crate::basis::DesignMatrix;
use crate::error::{Error, Result};
use crate::grid::CoordField;
use crate::linalg::dense::{dot, orthonormalize, symmetric_eigen};
use crate::rng::{normals, Domain};

pub const DEFAULT_OVERSAMPLE: usize = 10;
pub const POWER_ITERATIONS: usize = 2;
/// Upper bound on Rayleigh-Ritz refinement passes after the fixed power
/// iterations.
pub const MAX_REFINEMENTS: usize = 500;
/// Ritz residual ‖Cv − λv‖ accepted relative to the largest Ritz value.
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionModes {
    /// Descending, non-negative.
    pub values: Vec<f64>,
    /// Unit eigenvectors over all B columns (zero on pruned columns).
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBundle {
    pub directions: [DirectionModes; 3],
}

impl ModeBundle {
    pub fn len(&self) -> usize {
        self.directions[0].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a mode is scaled when displayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeScaling {
    /// c^μ + k λ_i e_i
    #[default]
    Eigenvalue,
    /// c^μ + k √λ_i e_i (k in standard deviations)
    SqrtEigenvalue,
}

fn test_key(direction: usize, column: usize) -> u64 {
    ((direction as u64) << 32) | column as u64
}

fn combine(coefs: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut v = vec![0.0; basis.first().map_or(0, Vec::len)];
    for (coef, b) in coefs.iter().zip(basis) {
        for (x, bv) in v.iter_mut().zip(b) {
            *x += coef * bv;
        }
    }
    v
}

fn converged(y: &[Vec<f64>], cy: &[Vec<f64>], vals: &[f64], vecs: &[Vec<f64>], k: usize) -> bool {
    let scale = vals.first().copied().unwrap_or(0.0).abs();
    if scale == 0.0 {
        return true;
    }
    vals.iter().zip(vecs).take(k).all(|(&lam, u)| {
        let v = combine(u, y);
        let cv = combine(u, cy);
        let r: f64 = cv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        r <= RESIDUAL_TOL * scale
    })
}

fn direction_modes(p: &TransformPosterior, direction: usize, k: usize, oversample: usize, seed: u64) -> DirectionModes {
    let n = p.active.len();
    let l = (k + oversample).min(n);
    let apply = |v: &Vec<f64>| p.apply_covariance(direction, v);

    let mut y: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|c| apply(&normals(seed, Domain::TestMatrix, test_key(direction, c), n)))
        .collect();
    for _ in 0..POWER_ITERATIONS {
        orthonormalize(&mut y);
        y = y.par_iter().map(apply).collect();
    }
    let mut iteration = 0;
    let (y, vals, vecs) = loop {
        orthonormalize(&mut y);
        // complete a rank-deficient range with coordinate directions
        let mut e = 0;
        while y.len() < k.min(n) && e < n {
            let mut cols = std::mem::take(&mut y);
            let mut unit = vec![0.0; n];
            unit[e] = 1.0;
            cols.push(unit);
            orthonormalize(&mut cols);
            y = cols;
            e += 1;
        }
        let cy: Vec<Vec<f64>> = y.par_iter().map(apply).collect();
        let q = y.len();
        let t: Vec<Vec<f64>> = (0..q)
            .map(|a| {
                (0..q)
                    .map(|b| 0.5 * (dot(&y[a], &cy[b]) + dot(&y[b], &cy[a])))
                    .collect()
            })
            .collect();
        let (vals, vecs) = symmetric_eigen(&t);
        iteration += 1;
        if q == n || iteration >= MAX_REFINEMENTS || converged(&y, &cy, &vals, &vecs, k) {
            break (y, vals, vecs);
        }
        // keep refining the subspace until the leading Ritz pairs settle
        y = cy;
    };

    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for (lam, u) in vals.into_iter().zip(vecs).take(k) {
        let mut v = combine(&u, &y);
        // sign convention: largest-magnitude entry positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let mut full = vec![0.0; p.columns];
        for (slot, &col) in p.active.iter().enumerate() {
            full[col] = v[slot];
        }
        values.push(lam.max(0.0));
        vectors.push(full);
    }
    DirectionModes { values, vectors }
}

/// Top-k eigenpairs of c^Σ_j for each direction.
pub fn leading_modes(p: &TransformPosterior, k: usize, oversample: usize, seed: u64) -> Result<ModeBundle> {
    let b = p.active.len();
    if k == 0 || k > b {
        return Err(Error::InvalidArgument(format!(
            "mode count must satisfy 1 <= k <= {b}, got {k}"
        )));
    }
    let dirs: Vec<DirectionModes> = (0..3)
        .into_par_iter()
        .map(|j| direction_modes(p, j, k, oversample, seed))
        .collect();
    let mut it = dirs.into_iter();
    Ok(ModeBundle {
        directions: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
    })
}

/// φ (c^μ_j + k·s_i·e_i) per direction, where `s_i` is λ_i or √λ_i.
/// `index` is zero-based.
pub fn mode_displacement(
    p: &TransformPosterior,
    phi: &DesignMatrix,
    modes: &ModeBundle,
    index: usize,
    scale: f64,
    scaling: ModeScaling,
) -> Result<CoordField> {
    p.check_basis(phi)?;
    if index >= modes.len() {
        return Err(Error::ModeOutOfRange {
            index,
            available: modes.len(),
        });
    }
    Ok(CoordField {
        channels: std::array::from_fn(|j| {
            let dm = &modes.directions[j];
            let lam = dm.values[index];
            let s = match scaling {
                ModeScaling::Eigenvalue => lam,
                ModeScaling::SqrtEigenvalue => lam.sqrt(),
            };
            let coef: Vec<f64> = p.directions[j]
                .coef_mean
                .iter()
                .zip(&dm.vectors[index])
                .map(|(c, e)| c + scale * s * e)
                .collect();
            phi.mul(&coef)
        }),
    })
}
