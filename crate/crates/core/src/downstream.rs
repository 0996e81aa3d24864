//! Segmentation propagation through transform samples: label warping,
//! per-voxel label counts, entropy and majority vote.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{nearest_label, CoordField, Grid, LabelVolume, Mask, ScalarVolume};

/// Pull the atlas labels back through a field of atlas-space world
/// coordinates (one per masked voxel). Unmasked voxels get background.
pub fn warp_labels(field: &CoordField, mask: &Mask, atlas: &LabelVolume) -> Result<LabelVolume> {
    let idx = mask.indices();
    if idx.len() != field.len() {
        return Err(Error::LengthMismatch {
            expected: idx.len(),
            actual: field.len(),
        });
    }
    let mut labels = vec![0u16; mask.grid.len()];
    for (m, &n) in idx.iter().enumerate() {
        labels[n] = nearest_label(atlas, field.point(m));
    }
    LabelVolume::new(mask.grid, labels)
}

/// Per-voxel label counts accumulated over S warped samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub grid: Grid,
    pub mask: Mask,
    /// Sorted labels; column order of `counts`.
    pub label_set: Vec<u16>,
    /// `counts[m * L + l]`: votes for `label_set[l]` at mask scan index m.
    pub counts: Vec<u32>,
    pub samples: u32,
}

impl LabelDistribution {
    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn voxel_counts(&self, m: usize) -> &[u32] {
        let l = self.num_labels();
        &self.counts[m * l..(m + 1) * l]
    }

    /// Build from raw counts, checking that every voxel sums to `samples`.
    pub fn from_counts(mask: Mask, label_set: Vec<u16>, counts: Vec<u32>, samples: u32) -> Result<Self> {
        let m = mask.count();
        let l = label_set.len();
        if l == 0 {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        if counts.len() != m * l {
            return Err(Error::LengthMismatch {
                expected: m * l,
                actual: counts.len(),
            });
        }
        if counts.chunks(l).any(|c| c.iter().sum::<u32>() != samples) {
            return Err(Error::InvalidArgument(format!(
                "per-voxel counts must sum to {samples}"
            )));
        }
        Ok(LabelDistribution {
            grid: mask.grid,
            mask,
            label_set,
            counts,
            samples,
        })
    }
}

/// Warp every sample and count labels per masked voxel. The label set is
/// the atlas label set (including background).
pub fn ensemble_labels(samples: &[CoordField], mask: &Mask, atlas: &LabelVolume) -> Result<LabelDistribution> {
    let Some(first) = samples.first() else {
        return Err(Error::TooFewSamples { required: 1, actual: 0 });
    };
    if samples.iter().any(|s| s.len() != first.len()) {
        return Err(Error::InconsistentSamples);
    }
    let m = mask.count();
    if first.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: first.len(),
        });
    }
    let mut label_set: Vec<u16> = atlas.label_set().to_vec();
    if !label_set.contains(&0) {
        label_set.insert(0, 0);
    }
    let l = label_set.len();
    let mut slot = vec![usize::MAX; 1 << 16];
    for (i, &lab) in label_set.iter().enumerate() {
        slot[lab as usize] = i;
    }
    let idx = mask.indices();
    // integer counts: the reduction order cannot change the result
    let counts = samples
        .par_iter()
        .map(|s| {
            let mut c = vec![0u32; m * l];
            for (mi, _) in idx.iter().enumerate() {
                let lab = nearest_label(atlas, s.point(mi));
                c[mi * l + slot[lab as usize]] += 1;
            }
            c
        })
        .reduce(
            || vec![0u32; m * l],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(LabelDistribution {
        grid: mask.grid,
        mask: mask.clone(),
        label_set,
        counts,
        samples: samples.len() as u32,
    })
}

/// Shannon entropy (natural log) of each masked voxel's label
/// distribution; 0 outside the mask.
pub fn entropy_map(dist: &LabelDistribution) -> ScalarVolume {
    let s = dist.samples as f64;
    let mut values = vec![0.0; dist.grid.len()];
    for (m, n) in dist.mask.indices().into_iter().enumerate() {
        values[n] = dist
            .voxel_counts(m)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / s;
                -p * p.ln()
            })
            .sum::<f64>()
            .max(0.0);
    }
    ScalarVolume {
        grid: dist.grid,
        values,
    }
}

/// Most frequent label per masked voxel; ties go to the smallest label.
pub fn majority_vote(dist: &LabelDistribution) -> LabelVolume {
    let mut labels = vec![0u16; dist.grid.len()];
    for (m, n) in dist.mask.indices().into_iter().enumerate() {
        let c = dist.voxel_counts(m);
        let mut best = 0;
        for (i, &v) in c.iter().enumerate() {
            if v > c[best] {
                best = i;
            }
        }
        labels[n] = dist.label_set[best];
    }
    LabelVolume::new(dist.grid, labels).expect("grid-sized label buffer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::world_coordinates;

    fn stripes(g: Grid) -> LabelVolume {
        LabelVolume::new(g, (0..g.len()).map(|n| g.index3(n)[0] as u16 + 1).collect()).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_atlas() {
        let g = Grid::new([5, 4, 3], [2.0, 1.0, 1.5], [3.0, -1.0, 0.0]).unwrap();
        let atlas = stripes(g);
        let mask = Mask::from_fn(g, |i| i[1] > 0);
        let id = world_coordinates(&g, &mask).unwrap();
        let warped = warp_labels(&id, &mask, &atlas).unwrap();
        for n in 0..g.len() {
            let expect = if mask.contains(n) { atlas.labels()[n] } else { 0 };
            assert_eq!(warped.labels()[n], expect);
        }
    }

    #[test]
    fn translation_shifts_stripes() {
        let g = Grid::unit([6, 2, 2]).unwrap();
        let atlas = stripes(g);
        let mask = Mask::full(g);
        let mut f = world_coordinates(&g, &mask).unwrap();
        f.channels[0].iter_mut().for_each(|x| *x += 1.0);
        let warped = warp_labels(&f, &mask, &atlas).unwrap();
        for n in 0..g.len() {
            let i = g.index3(n)[0];
            let expect = if i + 1 < 6 { i as u16 + 2 } else { 0 };
            assert_eq!(warped.labels()[n], expect);
        }
    }

    #[test]
    fn entropy_examples() {
        let g = Grid::unit([3, 1, 1]).unwrap();
        let mask = Mask::full(g);
        let dist = LabelDistribution::from_counts(mask, vec![0, 1, 2], vec![6, 0, 0, 3, 3, 0, 1, 2, 3], 6).unwrap();
        let h = entropy_map(&dist);
        assert_eq!(h.values[0], 0.0);
        assert!((h.values[1] - std::f64::consts::LN_2).abs() < 1e-12);
        let p: [f64; 3] = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        let expect: f64 = -p.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((h.values[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn majority_tie_goes_to_smallest_label() {
        let g = Grid::unit([2, 1, 1]).unwrap();
        let dist = LabelDistribution::from_counts(Mask::full(g), vec![0, 3, 7], vec![0, 2, 2, 4, 0, 0], 4).unwrap();
        assert_eq!(majority_vote(&dist).labels(), &[3, 0]);
    }

    #[test]
    fn counts_must_sum_to_samples() {
        let g = Grid::unit([1, 1, 1]).unwrap();
        assert!(LabelDistribution::from_counts(Mask::full(g), vec![0, 1], vec![1, 1], 3).is_err());
    }
}
