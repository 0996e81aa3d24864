//! Voxel lattice geometry and the volume types built on it.
//!
//! All volumes store their values x-fastest: the linear index of voxel
//! `(i, j, k)` is `i + dims[0] * (j + dims[1] * k)`, matching NIfTI.

use crate::error::{Error, Result};

/// Axis-aligned voxel lattice. World coordinates are in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Grid::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Total voxel count N.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn index3(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position (mm) of a possibly fractional voxel index.
    #[inline]
    pub fn world_of(&self, idx: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + idx[a] * self.spacing[a])
    }

    #[inline]
    pub fn world_of_voxel(&self, idx: [usize; 3]) -> [f64; 3] {
        self.world_of(idx.map(|v| v as f64))
    }

    /// Continuous voxel index of a world point (inverse of `world_of`).
    #[inline]
    pub fn index_of(&self, point: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (point[a] - self.origin[a]) / self.spacing[a])
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{what}: {:?} vs {:?}", self, other)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar volume".into()));
        }
        Ok(ScalarVolume { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarVolume {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.linear(idx)]
    }
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub grid: Grid,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(grid: Grid, values: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Mask { grid, values })
    }

    pub fn full(grid: Grid) -> Self {
        Mask {
            grid,
            values: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([usize; 3]) -> bool) -> Self {
        let values = (0..grid.len()).map(|n| f(grid.index3(n))).collect();
        Mask { grid, values }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    #[inline]
    pub fn contains(&self, linear: usize) -> bool {
        self.values[linear]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Linear indices of foreground voxels in scan order (ascending linear
    /// index). Position `m` in this list is the mask scan index of a voxel.
    pub fn indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(n, &v)| v.then_some(n))
            .collect()
    }

    pub(crate) fn nonempty_indices(&self) -> Result<Vec<usize>> {
        let idx = self.indices();
        if idx.is_empty() {
            return Err(Error::EmptyForeground);
        }
        Ok(idx)
    }

    /// Min/max voxel index of the foreground along each axis.
    pub fn bounding_box(&self) -> Result<([usize; 3], [usize; 3])> {
        let idx = self.nonempty_indices()?;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for n in idx {
            let v = self.grid.index3(n);
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Ok((lo, hi))
    }
}

/// Three coordinate channels over the masked voxels, in mask scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordField {
    pub channels: [Vec<f64>; 3],
}

impl CoordField {
    pub fn zeros(len: usize) -> Self {
        CoordField {
            channels: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, m: usize) -> [f64; 3] {
        std::array::from_fn(|j| self.channels[j][m])
    }

    /// Scatter into full-grid channels; background voxels get `fill`.
    pub fn scatter(&self, mask: &Mask, fill: f64) -> Result<[Vec<f64>; 3]> {
        let idx = mask.indices();
        if idx.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: idx.len(),
                actual: self.len(),
            });
        }
        Ok(std::array::from_fn(|j| {
            let mut out = vec![fill; mask.grid.len()];
            for (m, &n) in idx.iter().enumerate() {
                out[n] = self.channels[j][m];
            }
            out
        }))
    }

    /// Gather the masked voxels of full-grid channels.
    pub fn gather(full: &[Vec<f64>; 3], mask: &Mask) -> Result<Self> {
        for ch in full {
            if ch.len() != mask.grid.len() {
                return Err(Error::LengthMismatch {
                    expected: mask.grid.len(),
                    actual: ch.len(),
                });
            }
        }
        let idx = mask.indices();
        Ok(CoordField {
            channels: std::array::from_fn(|j| idx.iter().map(|&n| full[j][n]).collect()),
        })
    }
}

/// Per-voxel predicted coordinate means and standard deviations (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanStdField {
    pub grid: Grid,
    pub mean: [Vec<f64>; 3],
    pub std: [Vec<f64>; 3],
    pub mask: Mask,
}

impl MeanStdField {
    pub fn new(grid: Grid, mean: [Vec<f64>; 3], std: [Vec<f64>; 3], mask: Mask) -> Result<Self> {
        grid.ensure_same(&mask.grid, "mask")?;
        for ch in mean.iter().chain(std.iter()) {
            if ch.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    expected: grid.len(),
                    actual: ch.len(),
                });
            }
        }
        for n in mask.indices() {
            for j in 0..3 {
                if !mean[j][n].is_finite() {
                    return Err(Error::NonFinite(format!("mean at voxel {n}, direction {j}")));
                }
                let s = std[j][n];
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::NonPositiveStd { voxel: n, direction: j });
                }
            }
        }
        Ok(MeanStdField { grid, mean, std, mask })
    }

    /// Masked means in scan order.
    pub fn masked_mean(&self) -> CoordField {
        CoordField::gather(&self.mean, &self.mask).expect("validated lengths")
    }

    /// Masked standard deviations in scan order.
    pub fn masked_std(&self) -> CoordField {
        CoordField::gather(&self.std, &self.mask).expect("validated lengths")
    }
}

/// Integer segmentation; label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub grid: Grid,
    labels: Vec<u16>,
    label_set: Vec<u16>,
}

impl LabelVolume {
    pub fn new(grid: Grid, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: labels.len(),
            });
        }
        let mut label_set = labels.clone();
        label_set.sort_unstable();
        label_set.dedup();
        Ok(LabelVolume {
            grid,
            labels,
            label_set,
        })
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Sorted unique labels present (may include 0).
    pub fn label_set(&self) -> &[u16] {
        &self.label_set
    }

    pub fn get(&self, idx: [usize; 3]) -> u16 {
        self.labels[self.grid.linear(idx)]
    }
}

/// Trilinear interpolation at a world point; outside points clamp to the
/// boundary voxel.
pub fn trilinear_sample(vol: &ScalarVolume, point: [f64; 3]) -> f64 {
    let g = &vol.grid;
    let dims = g.dims();
    let t = g.index_of(point);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let c = t[a].clamp(0.0, max);
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        frac[a] = c - f;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                idx[a] = hi[a];
            } else {
                w *= 1.0 - frac[a];
                idx[a] = lo[a];
            }
        }
        if w != 0.0 {
            acc += w * vol.get(idx);
        }
    }
    acc
}

/// Voxel index nearest to a world point, or `None` outside the grid.
/// Exact half-way points round toward the lower index.
pub fn nearest_voxel(grid: &Grid, point: [f64; 3]) -> Option<[usize; 3]> {
    let t = grid.index_of(point);
    let dims = grid.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (t[a] - 0.5).ceil();
        if !(r >= 0.0 && r <= (dims[a] - 1) as f64) {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(idx)
}

/// Label of the nearest voxel center; background 0 outside the grid.
pub fn nearest_label(vol: &LabelVolume, point: [f64; 3]) -> u16 {
    nearest_voxel(&vol.grid, point).map_or(0, |idx| vol.get(idx))
}

/// World coordinates of the masked voxels, in mask scan order.
pub fn world_coordinates(grid: &Grid, mask: &Mask) -> Result<CoordField> {
    grid.ensure_same(&mask.grid, "mask")?;
    let idx = mask.nonempty_indices()?;
    let mut out = CoordField::zeros(idx.len());
    for (m, &n) in idx.iter().enumerate() {
        let w = grid.world_of_voxel(grid.index3(n));
        for j in 0..3 {
            out.channels[j][m] = w[j];
        }
    }
    Ok(out)
}
