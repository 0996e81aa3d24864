//! Sparse design matrices over the masked voxels.
//!
//! Rows follow mask scan order. Three families are provided: the affine
//! basis `[x, y, z, 1]`, a tensor-product uniform cubic B-spline lattice, and
//! horizontal concatenations of either.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Default B-spline control spacing in mm.
pub const DEFAULT_BSPLINE_SPACING_MM: f64 = 10.0;
/// Default cap on the number of B-spline columns.
pub const DEFAULT_BASIS_CAP: usize = 200_000;
/// Entries smaller than this are not stored.
pub const DROP_THRESHOLD: f64 = 1e-12;

/// Uniform control lattice of a cubic B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineLattice {
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub origin: [f64; 3],
}

impl BSplineLattice {
    /// Lattice aligned to the mask bounding box, padded by two control
    /// spacings on every side.
    pub fn for_mask(grid: &Grid, mask: &Mask, spacing_mm: f64) -> Result<Self> {
        if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "control spacing must be positive, got {spacing_mm}"
            )));
        }
        let (lo, hi) = mask.bounding_box()?;
        let wlo = grid.world_of_voxel(lo);
        let whi = grid.world_of_voxel(hi);
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let ext = (whi[a] - wlo[a]) / spacing_mm;
            dims[a] = (ext - 1e-9).ceil().max(0.0) as usize + 5;
            origin[a] = wlo[a] - 2.0 * spacing_mm;
        }
        Ok(BSplineLattice {
            spacing: [spacing_mm; 3],
            dims,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    /// Nonzero (column, weight) pairs at a world point, ascending columns.
    /// Returns `None` if the point lacks full support in the lattice.
    pub fn row(&self, point: [f64; 3]) -> Option<Vec<(usize, f64)>> {
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let mut t = (point[a] - self.origin[a]) / self.spacing[a];
            let r = t.round();
            if (t - r).abs() < 1e-9 {
                t = r;
            }
            let i = t.floor();
            if i < 1.0 || i + 2.0 > (self.dims[a] - 1) as f64 {
                return None;
            }
            base[a] = i as usize - 1;
            w[a] = cubic_weights(t - i);
        }
        let mut out = Vec::with_capacity(64);
        for kz in 0..4 {
            for ky in 0..4 {
                for kx in 0..4 {
                    let v = w[0][kx] * w[1][ky] * w[2][kz];
                    if v >= DROP_THRESHOLD {
                        out.push((self.column([base[0] + kx, base[1] + ky, base[2] + kz]), v));
                    }
                }
            }
        }
        Some(out)
    }
}

/// Uniform cubic B-spline pieces at local coordinate `u ∈ [0, 1)` for the
/// control points `i-1, i, i+1, i+2`.
pub fn cubic_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// One block of a joint basis and its column range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPart {
    pub spec: BasisSpec,
    pub start: usize,
    pub end: usize,
}

/// How the columns of a design matrix were generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Affine,
    Bspline {
        lattice: BSplineLattice,
    },
    Joint {
        parts: Vec<JointPart>,
    },
    /// Hand-assembled matrix; cannot be regenerated from a grid.
    Custom {
        columns: usize,
    },
}

impl BasisSpec {
    pub fn columns(&self) -> usize {
        match self {
            BasisSpec::Affine => 4,
            BasisSpec::Bspline { lattice } => lattice.len(),
            BasisSpec::Joint { parts } => parts.last().map_or(0, |p| p.end),
            BasisSpec::Custom { columns } => *columns,
        }
    }

    /// Re-evaluate the basis over a grid and mask.
    pub fn build(&self, grid: &Grid, mask: &Mask) -> Result<DesignMatrix> {
        match self {
            BasisSpec::Affine => affine_basis(grid, mask),
            BasisSpec::Bspline { lattice } => bspline_on_lattice(grid, mask, lattice),
            BasisSpec::Joint { parts } => {
                let mats = parts
                    .iter()
                    .map(|p| p.spec.build(grid, mask))
                    .collect::<Result<Vec<_>>>()?;
                joint_basis(&mats)
            }
            BasisSpec::Custom { .. } => Err(Error::BasisMismatch(
                "custom basis cannot be rebuilt from a grid".into(),
            )),
        }
    }
}

/// Row-compressed M×B matrix φ.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    spec: BasisSpec,
}

impl DesignMatrix {
    /// Rows of (column, value) pairs; columns must be strictly ascending.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>, spec: BasisSpec) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut prev = None;
            for (c, v) in row {
                if c >= cols || prev.is_some_and(|p| p >= c) {
                    return Err(Error::InvalidArgument(format!(
                        "row columns must be ascending and < {cols}"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite("design matrix entry".into()));
                }
                prev = Some(c);
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(DesignMatrix {
            cols,
            row_ptr,
            col_idx,
            vals,
            spec,
        })
    }

    /// Dense rows, zeros skipped. Tagged as a custom basis.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let sparse = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        DesignMatrix::from_rows(cols, sparse, BasisSpec::Custom { columns: cols })
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, m: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[m]..self.row_ptr[m + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|m| {
                let mut out = vec![0.0; self.cols];
                let (c, v) = self.row(m);
                for (&c, &v) in c.iter().zip(v) {
                    out[c] = v;
                }
                out
            })
            .collect()
    }

    /// φ c.
    pub fn mul(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.cols);
        (0..self.rows())
            .map(|m| {
                let (ci, v) = self.row(m);
                ci.iter().zip(v).map(|(&k, &x)| x * c[k]).sum()
            })
            .collect()
    }

    /// φᵀ v.
    pub fn tmul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows());
        let mut out = vec![0.0; self.cols];
        for (m, &vm) in v.iter().enumerate() {
            let (ci, x) = self.row(m);
            for (&k, &xv) in ci.iter().zip(x) {
                out[k] += xv * vm;
            }
        }
        out
    }

    /// Per-column flag: does the column have any stored entry?
    pub fn column_used(&self) -> Vec<bool> {
        let mut used = vec![false; self.cols];
        for &c in &self.col_idx {
            used[c] = true;
        }
        used
    }

    /// Columns with at least one stored entry, ascending.
    pub fn active_columns(&self) -> Vec<usize> {
        self.column_used()
            .iter()
            .enumerate()
            .filter_map(|(c, &u)| u.then_some(c))
            .collect()
    }

    /// Columns with no overlap with the mask. These are pruned before
    /// fitting and reported as unconstrained.
    pub fn pruned_columns(&self) -> Vec<usize> {
        self.column_used()
            .iter()
            .enumerate()
            .filter_map(|(c, &u)| (!u).then_some(c))
            .collect()
    }
}

/// φ = [x, y, z, 1] in world mm.
pub fn affine_basis(grid: &Grid, mask: &Mask) -> Result<DesignMatrix> {
    let coords = crate::grid::world_coordinates(grid, mask)?;
    let rows = (0..coords.len())
        .map(|m| {
            let p = coords.point(m);
            let mut row = Vec::with_capacity(4);
            for (c, v) in [p[0], p[1], p[2], 1.0].into_iter().enumerate() {
                if v != 0.0 {
                    row.push((c, v));
                }
            }
            row
        })
        .collect();
    DesignMatrix::from_rows(4, rows, BasisSpec::Affine)
}

/// Cubic B-spline basis on a lattice aligned to the mask, with the default
/// column cap.
pub fn bspline_basis(grid: &Grid, mask: &Mask, spacing_mm: f64) -> Result<(DesignMatrix, BSplineLattice)> {
    bspline_basis_with_cap(grid, mask, spacing_mm, DEFAULT_BASIS_CAP)
}

pub fn bspline_basis_with_cap(
    grid: &Grid,
    mask: &Mask,
    spacing_mm: f64,
    cap: usize,
) -> Result<(DesignMatrix, BSplineLattice)> {
    let lattice = BSplineLattice::for_mask(grid, mask, spacing_mm)?;
    if lattice.len() > cap {
        return Err(Error::BasisTooLarge {
            columns: lattice.len(),
            cap,
        });
    }
    let phi = bspline_on_lattice(grid, mask, &lattice)?;
    Ok((phi, lattice))
}

/// Evaluate a given lattice over the masked voxels.
pub fn bspline_on_lattice(grid: &Grid, mask: &Mask, lattice: &BSplineLattice) -> Result<DesignMatrix> {
    grid.ensure_same(&mask.grid, "mask")?;
    let idx = mask.nonempty_indices()?;
    let rows = idx
        .iter()
        .map(|&n| {
            let p = grid.world_of_voxel(grid.index3(n));
            lattice
                .row(p)
                .ok_or_else(|| Error::BasisMismatch(format!("voxel {n} lacks full B-spline support")))
        })
        .collect::<Result<Vec<_>>>()?;
    DesignMatrix::from_rows(
        lattice.len(),
        rows,
        BasisSpec::Bspline {
            lattice: lattice.clone(),
        },
    )
}

/// Horizontal concatenation of design matrices sharing row order.
pub fn joint_basis(parts: &[DesignMatrix]) -> Result<DesignMatrix> {
    let Some(first) = parts.first() else {
        return Err(Error::InvalidArgument("joint basis needs at least one part".into()));
    };
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    let m = first.rows();
    if parts.iter().any(|p| p.rows() != m) {
        return Err(Error::MismatchedRows(parts.iter().map(|p| p.rows()).collect()));
    }
    let mut offset = 0;
    let mut specs = Vec::with_capacity(parts.len());
    for p in parts {
        specs.push(JointPart {
            spec: p.spec.clone(),
            start: offset,
            end: offset + p.cols,
        });
        offset += p.cols;
    }
    let rows = (0..m)
        .map(|r| {
            parts
                .iter()
                .zip(&specs)
                .flat_map(|(p, s)| {
                    let (c, v) = p.row(r);
                    c.iter().zip(v).map(move |(&c, &v)| (c + s.start, v))
                })
                .collect()
        })
        .collect();
    DesignMatrix::from_rows(offset, rows, BasisSpec::Joint { parts: specs })
}
