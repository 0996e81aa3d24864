//! Weighted least-squares fitting of basis-function transforms.
//!
//! Each coordinate direction `j` is fitted independently with precisions
//! `W_j = diag(σ_j⁻²)`. The normal matrix `H_j = φᵀW_jφ + εI` is assembled
//! in skyline storage over the active (mask-overlapping) columns and
//! factored as `H_j = R_jᵀR_j`; everything downstream (variances, samples,
//! modes) works through that factor.
//!
//! The coefficient covariance `A_j W_j⁻¹ A_jᵀ` with
//! `A_j = H_j⁻¹φᵀW_j` equals `H_j⁻¹ G_j H_j⁻¹` where `G_j = H_j − εI`, i.e.
//! `H_j⁻¹ − ε H_j⁻²`. With ε = 0 it reduces to `H_j⁻¹`.

mod modes;
mod sampling;

pub use modes::{
    leading_modes, mode_displacement, DirectionModes, ModeBundle, ModeScaling, DEFAULT_OVERSAMPLE, POWER_ITERATIONS,
};
pub use sampling::{sample_coefficients, sample_fields, NoiseModel};

use rayon::prelude::*;

use crate::basis::{affine_basis, bspline_basis, BasisSpec, DesignMatrix};
use crate::error::{Error, Result};
use crate::grid::{CoordField, Grid, Mask, MeanStdField};
use crate::linalg::Skyline;

/// Relative Tikhonov weight used when no ε is given: ε = 1e-8·trace(G)/B.
pub const DEFAULT_EPSILON_SCALE: f64 = 1e-8;

/// Largest coefficient count for which a dense covariance is materialized.
pub const DENSE_COVARIANCE_LIMIT: usize = 4096;

/// Fit of a single coordinate direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionFit {
    /// c^μ_j over all B columns; pruned columns hold 0.
    pub coef_mean: Vec<f64>,
    /// Upper Cholesky factor of φᵀW_jφ + εI over the active columns.
    pub factor: Skyline,
    pub epsilon: f64,
}

/// Gaussian posterior over transform coefficients, one per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPosterior {
    pub basis: BasisSpec,
    pub columns: usize,
    /// Columns that overlap the mask, ascending. Factors are indexed by
    /// position in this list.
    pub active: Vec<usize>,
    pub weighted: bool,
    pub directions: [DirectionFit; 3],
}

impl TransformPosterior {
    pub fn coef_mean(&self, direction: usize) -> &[f64] {
        &self.directions[direction].coef_mean
    }

    /// Columns with no mask overlap (unconstrained).
    pub fn pruned(&self) -> Vec<usize> {
        let mut used = vec![false; self.columns];
        for &c in &self.active {
            used[c] = true;
        }
        (0..self.columns).filter(|&c| !used[c]).collect()
    }

    pub(crate) fn check_basis(&self, phi: &DesignMatrix) -> Result<()> {
        if phi.cols() != self.columns {
            return Err(Error::BasisMismatch(format!(
                "posterior has {} columns, design matrix {}",
                self.columns,
                phi.cols()
            )));
        }
        let same = match (&self.basis, phi.spec()) {
            (BasisSpec::Custom { .. }, BasisSpec::Custom { .. }) => true,
            (a, b) => a == b,
        };
        if !same {
            return Err(Error::BasisMismatch("basis spec differs from posterior".into()));
        }
        if phi.active_columns() != self.active {
            return Err(Error::BasisMismatch("active columns differ".into()));
        }
        Ok(())
    }

    /// c^Σ_j v for v over the active columns.
    pub fn apply_covariance(&self, direction: usize, v: &[f64]) -> Vec<f64> {
        let d = &self.directions[direction];
        let mut x = v.to_vec();
        d.factor.solve(&mut x);
        if d.epsilon != 0.0 {
            let mut x2 = x.clone();
            d.factor.solve(&mut x2);
            for (a, b) in x.iter_mut().zip(&x2) {
                *a -= d.epsilon * b;
            }
        }
        x
    }

    /// Dense c^Σ_j over the active columns (rows of the symmetric matrix).
    pub fn covariance_active(&self, direction: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.active.len();
        if n > DENSE_COVARIANCE_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "dense covariance requested for {n} coefficients (limit {DENSE_COVARIANCE_LIMIT})"
            )));
        }
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.apply_covariance(direction, &e)
            })
            .collect())
    }
}

struct WeightedProblem<'a> {
    phi: &'a DesignMatrix,
    active: Vec<usize>,
    /// Column index -> position in `active`.
    slot: Vec<usize>,
    first: Vec<usize>,
}

impl<'a> WeightedProblem<'a> {
    fn new(phi: &'a DesignMatrix) -> Self {
        let active = phi.active_columns();
        let mut slot = vec![usize::MAX; phi.cols()];
        for (a, &c) in active.iter().enumerate() {
            slot[c] = a;
        }
        let mut first: Vec<usize> = (0..active.len()).collect();
        for m in 0..phi.rows() {
            let (cols, _) = phi.row(m);
            if let Some(&c0) = cols.first() {
                let lo = slot[c0];
                for &c in cols {
                    let s = slot[c];
                    first[s] = first[s].min(lo);
                }
            }
        }
        WeightedProblem {
            phi,
            active,
            slot,
            first,
        }
    }

    fn normal_matrix(&self, weights: &[f64]) -> Skyline {
        let mut h = Skyline::zeros(self.first.clone());
        for (m, &w) in weights.iter().enumerate() {
            let (cols, vals) = self.phi.row(m);
            for (b, (&cb, &vb)) in cols.iter().zip(vals).enumerate() {
                let sb = self.slot[cb];
                let wb = w * vb;
                for (&ca, &va) in cols[..=b].iter().zip(&vals[..=b]) {
                    h.add(self.slot[ca], sb, wb * va);
                }
            }
        }
        h
    }

    /// φᵀ (w ⊙ v) restricted to active columns.
    fn weighted_rhs(&self, weights: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.active.len()];
        for (m, (&w, &x)) in weights.iter().zip(v).enumerate() {
            let (cols, vals) = self.phi.row(m);
            let wx = w * x;
            for (&c, &p) in cols.iter().zip(vals) {
                out[self.slot[c]] += p * wx;
            }
        }
        out
    }

    fn fit_direction(
        &self,
        direction: usize,
        weights: &[f64],
        target: &[f64],
        epsilon: Option<f64>,
    ) -> Result<DirectionFit> {
        let mut h = self.normal_matrix(weights);
        let n = self.active.len();
        let eps = match epsilon {
            Some(e) if e >= 0.0 && e.is_finite() => e,
            Some(e) => return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {e}"))),
            None => DEFAULT_EPSILON_SCALE * h.trace() / n.max(1) as f64,
        };
        if eps != 0.0 {
            h.add_to_diagonal(eps);
        }
        let factor = h.cholesky().map_err(|bad| Error::Factorization {
            direction,
            columns: bad.iter().map(|&s| self.active[s]).collect(),
        })?;
        let mut c = self.weighted_rhs(weights, target);
        factor.solve(&mut c);
        let mut coef_mean = vec![0.0; self.phi.cols()];
        for (s, &col) in self.active.iter().enumerate() {
            coef_mean[col] = c[s];
        }
        Ok(DirectionFit {
            coef_mean,
            factor,
            epsilon: eps,
        })
    }
}

fn check_rows(field: &MeanStdField, phi: &DesignMatrix) -> Result<usize> {
    let m = field.mask.count();
    if m == 0 {
        return Err(Error::EmptyForeground);
    }
    if phi.rows() != m {
        return Err(Error::BasisMismatch(format!(
            "design matrix has {} rows, mask has {m} voxels",
            phi.rows()
        )));
    }
    Ok(m)
}

fn fit_with_weights(
    field: &MeanStdField,
    phi: &DesignMatrix,
    epsilon: Option<f64>,
    weighted: bool,
) -> Result<TransformPosterior> {
    let m = check_rows(field, phi)?;
    let mean = field.masked_mean();
    let std = field.masked_std();
    let problem = WeightedProblem::new(phi);
    let fits: Vec<Result<DirectionFit>> = (0..3)
        .into_par_iter()
        .map(|j| {
            let weights: Vec<f64> = if weighted {
                std.channels[j].iter().map(|s| 1.0 / (s * s)).collect()
            } else {
                vec![1.0; m]
            };
            problem.fit_direction(j, &weights, &mean.channels[j], epsilon)
        })
        .collect();
    let mut it = fits.into_iter();
    let directions = [it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?];
    Ok(TransformPosterior {
        basis: phi.spec().clone(),
        columns: phi.cols(),
        active: problem.active,
        weighted,
        directions,
    })
}

/// Precision-weighted fit. `epsilon = None` selects 1e-8·trace/B per
/// direction; `Some(0.0)` gives the unregularized estimator.
pub fn fit_weighted(field: &MeanStdField, phi: &DesignMatrix, epsilon: Option<f64>) -> Result<TransformPosterior> {
    fit_with_weights(field, phi, epsilon, true)
}

/// Ordinary least squares: every precision set to 1.
pub fn fit_unweighted(field: &MeanStdField, phi: &DesignMatrix, epsilon: Option<f64>) -> Result<TransformPosterior> {
    fit_with_weights(field, phi, epsilon, false)
}

/// φ c^μ_j per direction, in mask scan order.
pub fn most_likely_field(p: &TransformPosterior, phi: &DesignMatrix) -> Result<CoordField> {
    p.check_basis(phi)?;
    Ok(CoordField {
        channels: std::array::from_fn(|j| phi.mul(&p.directions[j].coef_mean)),
    })
}

/// diag(c^Σ_j) per direction. Pruned columns report `f64::INFINITY`.
pub fn coefficient_variance(p: &TransformPosterior) -> [Vec<f64>; 3] {
    std::array::from_fn(|j| {
        let d = &p.directions[j];
        let n = p.active.len();
        let active_var: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut z = vec![0.0; n];
                z[i] = 1.0;
                d.factor.solve_upper_transpose_from(&mut z, i);
                let mut var: f64 = z.iter().map(|v| v * v).sum();
                if d.epsilon != 0.0 {
                    d.factor.solve_upper(&mut z);
                    var -= d.epsilon * z.iter().map(|v| v * v).sum::<f64>();
                }
                var
            })
            .collect();
        let mut out = vec![f64::INFINITY; p.columns];
        for (s, &c) in p.active.iter().enumerate() {
            out[c] = active_var[s];
        }
        out
    })
}

/// Replace the masked means of `field` by `mean - fitted`.
fn residual_field(field: &MeanStdField, fitted: &CoordField) -> Result<MeanStdField> {
    let idx = field.mask.indices();
    let mut mean = field.mean.clone();
    for (m, &n) in idx.iter().enumerate() {
        for j in 0..3 {
            mean[j][n] -= fitted.channels[j][m];
        }
    }
    MeanStdField::new(field.grid, mean, field.std.clone(), field.mask.clone())
}

/// Result of a sequential linear / nonlinear fit.
#[derive(Debug, Clone)]
pub struct SequentialFit {
    pub linear: TransformPosterior,
    pub nonlinear: TransformPosterior,
}

impl SequentialFit {
    /// Composition: linear field plus the residual nonlinear field.
    pub fn composed_field(&self, linear: &DesignMatrix, nonlinear: &DesignMatrix) -> Result<CoordField> {
        let a = most_likely_field(&self.linear, linear)?;
        let b = most_likely_field(&self.nonlinear, nonlinear)?;
        Ok(CoordField {
            channels: std::array::from_fn(|j| a.channels[j].iter().zip(&b.channels[j]).map(|(x, y)| x + y).collect()),
        })
    }
}

/// Fit `linear` first, then fit `nonlinear` to the residual means with the
/// same standard deviations.
pub fn sequential_fit_with(
    field: &MeanStdField,
    linear: &DesignMatrix,
    nonlinear: &DesignMatrix,
    epsilon: Option<f64>,
    weighted: bool,
) -> Result<SequentialFit> {
    let first = fit_with_weights(field, linear, epsilon, weighted)?;
    let fitted = most_likely_field(&first, linear)?;
    let residual = residual_field(field, &fitted)?;
    let second = fit_with_weights(&residual, nonlinear, epsilon, weighted)?;
    Ok(SequentialFit {
        linear: first,
        nonlinear: second,
    })
}

/// Affine fit followed by a B-spline fit of the residual.
pub fn sequential_fit(
    field: &MeanStdField,
    grid: &Grid,
    mask: &Mask,
    spacing_mm: f64,
    epsilon: Option<f64>,
) -> Result<(SequentialFit, DesignMatrix, DesignMatrix)> {
    let linear = affine_basis(grid, mask)?;
    let (nonlinear, _) = bspline_basis(grid, mask, spacing_mm)?;
    let fit = sequential_fit_with(field, &linear, &nonlinear, epsilon, true)?;
    Ok((fit, linear, nonlinear))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from(grid: Grid, mean: [Vec<f64>; 3], std: [Vec<f64>; 3]) -> MeanStdField {
        MeanStdField::new(grid, mean, std, Mask::full(grid)).unwrap()
    }

    fn ones(m: usize) -> DesignMatrix {
        DesignMatrix::from_dense(&vec![vec![1.0]; m]).unwrap()
    }

    #[test]
    fn constant_target_gives_weighted_mean_variance() {
        let g = Grid::unit([5, 1, 1]).unwrap();
        let sig = vec![0.5, 1.0, 2.0, 1.5, 0.7];
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![5.0; 5]),
            std::array::from_fn(|_| sig.clone()),
        );
        let p = fit_weighted(&f, &ones(5), Some(0.0)).unwrap();
        let var = coefficient_variance(&p);
        let expect = 1.0 / sig.iter().map(|s| s.powi(-2)).sum::<f64>();
        for j in 0..3 {
            assert!((p.coef_mean(j)[0] - 5.0).abs() < 1e-12);
            assert!((var[j][0] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn ordinary_mean() {
        let g = Grid::unit([2, 1, 1]).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![0.0, 10.0]),
            std::array::from_fn(|_| vec![1.0, 1.0]),
        );
        let p = fit_unweighted(&f, &ones(2), Some(0.0)).unwrap();
        assert!((p.coef_mean(0)[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn variance_of_a_mean() {
        let g = Grid::unit([7, 1, 1]).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![1.0; 7]),
            std::array::from_fn(|_| vec![1.0; 7]),
        );
        let p = fit_weighted(&f, &ones(7), Some(0.0)).unwrap();
        assert!((coefficient_variance(&p)[1][0] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn pruned_columns_report_infinite_variance() {
        let phi = DesignMatrix::from_dense(&[vec![1.0, 0.0, 1.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let g = Grid::unit([2, 1, 1]).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![1.0, 3.0]),
            std::array::from_fn(|_| vec![1.0; 2]),
        );
        let p = fit_weighted(&f, &phi, Some(0.0)).unwrap();
        assert_eq!(p.pruned(), vec![1]);
        let v = coefficient_variance(&p);
        assert!(v[0][1].is_infinite());
        assert!(v[0][0].is_finite());
        for (a, b) in p.coef_mean(0).iter().zip([2.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let phi = DesignMatrix::from_dense(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let g = Grid::unit([2, 1, 1]).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![1.0, 3.0]),
            std::array::from_fn(|_| vec![1.0; 2]),
        );
        match fit_weighted(&f, &phi, Some(0.0)) {
            Err(Error::Factorization { columns, .. }) => assert_eq!(columns, vec![1]),
            other => panic!("expected factorization error, got {other:?}"),
        }
        // the default ridge makes it solvable
        assert!(fit_weighted(&f, &phi, None).is_ok());
    }

    #[test]
    fn row_count_mismatch_is_an_error() {
        let g = Grid::unit([3, 1, 1]).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![1.0; 3]),
            std::array::from_fn(|_| vec![1.0; 3]),
        );
        assert!(matches!(fit_weighted(&f, &ones(2), None), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn basis_mismatch_detected() {
        let g = Grid::unit([3, 3, 3]).unwrap();
        let mask = Mask::full(g);
        let phi = affine_basis(&g, &mask).unwrap();
        let f = field_from(
            g,
            std::array::from_fn(|_| vec![1.0; 27]),
            std::array::from_fn(|_| vec![1.0; 27]),
        );
        let p = fit_weighted(&f, &phi, None).unwrap();
        let other = ones(27);
        assert!(most_likely_field(&p, &other).is_err());
    }
}
