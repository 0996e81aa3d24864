//! Symmetric positive-definite matrices in skyline (envelope) storage and
//! their upper Cholesky factor `H = RᵀR`.
//!
//! Column `j` stores rows `first[j]..=j`. Cholesky fill-in never leaves the
//! envelope, so the factor reuses the same layout.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Skyline {
    first: Vec<usize>,
    /// Offset of the first stored entry of each column; `offsets[n]` = total.
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl Skyline {
    /// Zero matrix with the given envelope. `first[j] <= j` must hold.
    pub fn zeros(first: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(first.len() + 1);
        let mut acc = 0usize;
        for (j, &f) in first.iter().enumerate() {
            assert!(f <= j, "envelope start {f} past diagonal {j}");
            offsets.push(acc);
            acc += j - f + 1;
        }
        offsets.push(acc);
        Skyline {
            first,
            offsets,
            values: vec![0.0; acc],
        }
    }

    /// Rebuild from raw parts (used by the posterior reader).
    pub fn from_parts(first: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut s = Skyline::zeros(first);
        if s.values.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: s.values.len(),
                actual: values.len(),
            });
        }
        s.values = values;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn first(&self) -> &[usize] {
        &self.first
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn column(&self, j: usize) -> &[f64] {
        &self.values[self.offsets[j]..self.offsets[j + 1]]
    }

    /// Entry (i, j) of the upper triangle, i <= j.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        if i < self.first[j] {
            0.0
        } else {
            self.values[self.offsets[j] + i - self.first[j]]
        }
    }

    /// Adds to entry (i, j), i <= j, which must lie in the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i <= j && i >= self.first[j]);
        self.values[self.offsets[j] + i - self.first[j]] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.get(j, j)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn add_to_diagonal(&mut self, eps: f64) {
        for j in 0..self.dim() {
            self.add(j, j, eps);
        }
    }

    /// Symmetric product `H x` using the upper triangle.
    pub fn sym_mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for j in 0..n {
            let f = self.first[j];
            let col = self.column(j);
            let mut acc = 0.0;
            for (k, &v) in col.iter().enumerate() {
                let i = f + k;
                acc += v * x[i];
                if i != j {
                    y[i] += v * x[j];
                }
            }
            y[j] += acc;
        }
        y
    }

    /// Upper Cholesky factor. On failure returns the columns whose pivot
    /// was not positive.
    pub fn cholesky(&self) -> std::result::Result<Skyline, Vec<usize>> {
        let n = self.dim();
        let mut r = self.clone();
        let mut bad = Vec::new();
        for j in 0..n {
            let fj = r.first[j];
            let oj = r.offsets[j];
            for i in fj..j {
                let fi = r.first[i];
                let oi = r.offsets[i];
                let start = fi.max(fj);
                let mut s = r.values[oj + i - fj];
                // dot of column i and column j over rows start..i
                let ci = &r.values[oi + start - fi..oi + i - fi];
                let cj = &r.values[oj + start - fj..oj + i - fj];
                s -= ci.iter().zip(cj).map(|(a, b)| a * b).sum::<f64>();
                let d = r.values[oi + i - fi];
                r.values[oj + i - fj] = if d > 0.0 { s / d } else { 0.0 };
            }
            let cj = &r.values[oj..oj + j - fj];
            let d = r.values[oj + j - fj] - cj.iter().map(|v| v * v).sum::<f64>();
            let scale = self.get(j, j).abs().max(f64::MIN_POSITIVE);
            if d > 1e-14 * scale && d.is_finite() {
                r.values[oj + j - fj] = d.sqrt();
            } else {
                bad.push(j);
                r.values[oj + j - fj] = 1.0;
            }
        }
        if bad.is_empty() {
            Ok(r)
        } else {
            Err(bad)
        }
    }

    /// Solves `Rᵀ y = b` in place, treating `self` as an upper factor.
    pub fn solve_upper_transpose(&self, b: &mut [f64]) {
        for j in 0..self.dim() {
            let f = self.first[j];
            let col = self.column(j);
            let s: f64 = col[..j - f].iter().zip(&b[f..j]).map(|(r, y)| r * y).sum();
            b[j] = (b[j] - s) / col[j - f];
        }
    }

    /// Like [`solve_upper_transpose`](Self::solve_upper_transpose) when
    /// `b[..start]` is known to be zero.
    pub fn solve_upper_transpose_from(&self, b: &mut [f64], start: usize) {
        for j in start..self.dim() {
            let f = self.first[j].max(start);
            let col = self.column(j);
            let off = f - self.first[j];
            let s: f64 = col[off..j - self.first[j]]
                .iter()
                .zip(&b[f..j])
                .map(|(r, y)| r * y)
                .sum();
            b[j] = (b[j] - s) / col[j - self.first[j]];
        }
    }

    /// Solves `R x = y` in place.
    pub fn solve_upper(&self, y: &mut [f64]) {
        for j in (0..self.dim()).rev() {
            let f = self.first[j];
            let col = self.column(j);
            let xj = y[j] / col[j - f];
            y[j] = xj;
            for (k, &r) in col[..j - f].iter().enumerate() {
                y[f + k] -= r * xj;
            }
        }
    }

    /// Solves `RᵀR x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_upper_transpose(b);
        self.solve_upper(b);
    }
}
