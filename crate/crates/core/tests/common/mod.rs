//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uncreg::{DesignMatrix, Grid, Mask, MeanStdField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Random dense problem on an M×1×1 grid with a full mask.
pub fn random_problem(seed: u64, m: usize, b: usize) -> (MeanStdField, DesignMatrix) {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..b).map(|_| gauss(&mut r)).collect()).collect();
    let phi = DesignMatrix::from_dense(&rows).unwrap();
    let grid = Grid::unit([m, 1, 1]).unwrap();
    let mean = std::array::from_fn(|_| (0..m).map(|_| 10.0 * gauss(&mut r)).collect());
    let std = std::array::from_fn(|_| (0..m).map(|_| r.random_range(0.5..2.0)).collect());
    let field = MeanStdField::new(grid, mean, std, Mask::full(grid)).unwrap();
    (field, phi)
}

pub fn dense(phi: &DesignMatrix) -> DMatrix<f64> {
    let d = phi.to_dense();
    DMatrix::from_fn(phi.rows(), phi.cols(), |i, j| d[i][j])
}

/// Textbook weighted least squares for one direction:
/// c^μ = (φᵀWφ)⁻¹φᵀWμ and c^Σ = A W⁻¹ Aᵀ with A = (φᵀWφ + εI)⁻¹φᵀW.
pub struct DenseFit {
    pub coef: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn dense_fit(phi: &DMatrix<f64>, mu: &[f64], std: &[f64], weighted: bool, eps: f64) -> DenseFit {
    let m = phi.nrows();
    let w = DVector::from_fn(m, |i, _| if weighted { std[i].powi(-2) } else { 1.0 });
    let wmat = DMatrix::from_diagonal(&w);
    let winv = DMatrix::from_diagonal(&w.map(|x| 1.0 / x));
    let h = phi.transpose() * &wmat * phi + DMatrix::identity(phi.ncols(), phi.ncols()) * eps;
    let hinv = h.try_inverse().expect("invertible normal matrix");
    let a = &hinv * phi.transpose() * &wmat;
    let coef = &a * DVector::from_column_slice(mu);
    let cov = &a * winv * a.transpose();
    DenseFit { coef, cov }
}

pub fn masked(field: &MeanStdField) -> ([Vec<f64>; 3], [Vec<f64>; 3]) {
    (field.masked_mean().channels, field.masked_std().channels)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.first().map_or(0, Vec::len), |i, j| rows[i][j])
}
