//! Synthetic ground-truth deformations with heteroscedastic noisy
//! coordinate predictions, masks and paired segmentations.
//!
//! The grid is centered on the world origin. The true map sends a subject
//! voxel at world position `x` to atlas coordinates
//! `A x + t + Σ_b a_b exp(−‖x − c_b‖² / 2w_b²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{nearest_label, CoordField, Grid, LabelVolume, Mask, MeanStdField, ScalarVolume};
use crate::rng::{normals, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    /// Row-major 3×3 linear part.
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Affine {
    fn default() -> Self {
        Affine {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }
}

impl Affine {
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|r| {
            self.matrix[r][0] * x[0] + self.matrix[r][1] * x[1] + self.matrix[r][2] * x[2] + self.translation[r]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 3],
    pub width_mm: f64,
    pub amplitude: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum SigmaPattern {
    Constant,
    /// Linear in distance from the center, σ_min at the center and σ_max at
    /// the mask radius.
    RadialRamp,
    /// σ_max on a thin shell at `shell_fraction`·radius, falling to σ_min
    /// with Gaussian profile of width `shell_width_mm`.
    Cortex {
        shell_fraction: f64,
        shell_width_mm: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pattern: SigmaPattern,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// What the generated field reports as its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Calibrated,
    /// Reported std = factor × true σ.
    Scaled { factor: f64 },
    /// Reported std is the mean true σ over the mask everywhere.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtlasPattern {
    /// Concentric shells out to the mask radius.
    Shells { labels: u16 },
    /// Slabs of `width_mm` along x inside the mask radius, cycling labels.
    Stripes { labels: u16, width_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Radius (mm) of the spherical foreground mask.
    pub mask_radius_mm: f64,
    pub affine: Affine,
    pub bumps: Vec<Bump>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub calibration: Calibration,
    pub atlas: AtlasPattern,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dims: [32, 32, 32],
            spacing: [2.0; 3],
            mask_radius_mm: 28.0,
            affine: Affine::default(),
            bumps: Vec::new(),
            noise: NoiseSpec {
                pattern: SigmaPattern::Cortex {
                    shell_fraction: 0.85,
                    shell_width_mm: 3.0,
                },
                sigma_min: 0.5,
                sigma_max: 5.0,
            },
            calibration: Calibration::Calibrated,
            atlas: AtlasPattern::Shells { labels: 4 },
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn grid(&self) -> Result<Grid> {
        let origin = std::array::from_fn(|a| -((self.dims[a] - 1) as f64) * self.spacing[a] / 2.0);
        Grid::new(self.dims, self.spacing, origin)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if !(self.mask_radius_mm > 0.0) {
            return Err(Error::InvalidArgument("mask radius must be > 0".into()));
        }
        if self.bumps.iter().any(|b| !(b.width_mm > 0.0)) {
            return Err(Error::InvalidArgument("bump widths must be > 0".into()));
        }
        let n = &self.noise;
        if !(n.sigma_min > 0.0 && n.sigma_max >= n.sigma_min && n.sigma_max.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise bounds must satisfy 0 < sigma_min <= sigma_max".into(),
            ));
        }
        if let SigmaPattern::Cortex { shell_width_mm, .. } = n.pattern {
            if !(shell_width_mm > 0.0) {
                return Err(Error::InvalidArgument("shell width must be > 0".into()));
            }
        }
        match self.atlas {
            AtlasPattern::Shells { labels } | AtlasPattern::Stripes { labels, .. } if labels == 0 => {
                Err(Error::InvalidArgument("atlas needs at least one label".into()))
            }
            AtlasPattern::Stripes { width_mm, .. } if !(width_mm > 0.0) => {
                Err(Error::InvalidArgument("stripe width must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// The true transform at a world point.
    pub fn transform(&self, x: [f64; 3]) -> [f64; 3] {
        let mut y = self.affine.apply(x);
        for b in &self.bumps {
            let d2: f64 = (0..3).map(|a| (x[a] - b.center[a]).powi(2)).sum();
            let g = (-d2 / (2.0 * b.width_mm * b.width_mm)).exp();
            for a in 0..3 {
                y[a] += b.amplitude[a] * g;
            }
        }
        y
    }

    /// True σ at a world point.
    pub fn sigma(&self, x: [f64; 3]) -> f64 {
        let n = &self.noise;
        let d = norm(x);
        let r = self.mask_radius_mm;
        let t = match n.pattern {
            SigmaPattern::Constant => 0.0,
            SigmaPattern::RadialRamp => (d / r).clamp(0.0, 1.0),
            SigmaPattern::Cortex {
                shell_fraction,
                shell_width_mm,
            } => {
                let off = d - shell_fraction * r;
                (-off * off / (2.0 * shell_width_mm * shell_width_mm)).exp()
            }
        };
        n.sigma_min + (n.sigma_max - n.sigma_min) * t
    }

    fn atlas_label(&self, x: [f64; 3]) -> u16 {
        let r = self.mask_radius_mm;
        let d = norm(x);
        if d > r {
            return 0;
        }
        match self.atlas {
            AtlasPattern::Shells { labels } => {
                let k = ((d / r) * labels as f64).floor() as u16;
                k.min(labels - 1) + 1
            }
            AtlasPattern::Stripes { labels, width_mm } => {
                let k = ((x[0] + r) / width_mm).floor().max(0.0) as u64;
                (k % labels as u64) as u16 + 1
            }
        }
    }
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// True atlas coordinates for every voxel (full grid).
    pub truth: [Vec<f64>; 3],
    pub field: MeanStdField,
    pub mask: Mask,
    pub subject_seg: LabelVolume,
    pub atlas_seg: LabelVolume,
    /// True per-voxel σ (full grid), whatever the reported calibration.
    pub true_sigma: Vec<f64>,
}

impl SynthOutput {
    pub fn truth_masked(&self) -> CoordField {
        CoordField::gather(&self.truth, &self.mask).expect("grid-sized truth")
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let grid = spec.grid()?;
    let n = grid.len();
    let world: Vec<[f64; 3]> = (0..n).map(|i| grid.world_of_voxel(grid.index3(i))).collect();
    let mask = Mask::new(grid, world.iter().map(|&x| norm(x) <= spec.mask_radius_mm).collect())?;
    if mask.count() == 0 {
        return Err(Error::EmptyForeground);
    }
    let mapped: Vec<[f64; 3]> = world.iter().map(|&x| spec.transform(x)).collect();
    let truth: [Vec<f64>; 3] = std::array::from_fn(|j| mapped.iter().map(|y| y[j]).collect());
    let true_sigma: Vec<f64> = world.iter().map(|&x| spec.sigma(x)).collect();
    let mean: [Vec<f64>; 3] = std::array::from_fn(|j| {
        let g = normals(spec.seed, Domain::SynthNoise, j as u64, n);
        (0..n).map(|i| truth[j][i] + true_sigma[i] * g[i]).collect()
    });
    let reported: Vec<f64> = match spec.calibration {
        Calibration::Calibrated => true_sigma.clone(),
        Calibration::Scaled { factor } => {
            if !(factor > 0.0) {
                return Err(Error::InvalidArgument("calibration factor must be > 0".into()));
            }
            true_sigma.iter().map(|s| s * factor).collect()
        }
        Calibration::Flat => {
            let idx = mask.indices();
            let avg = idx.iter().map(|&i| true_sigma[i]).sum::<f64>() / idx.len() as f64;
            vec![avg; n]
        }
    };
    let field = MeanStdField::new(grid, mean, std::array::from_fn(|_| reported.clone()), mask.clone())?;
    let atlas_seg = LabelVolume::new(grid, world.iter().map(|&x| spec.atlas_label(x)).collect())?;
    let subject_seg = LabelVolume::new(grid, mapped.iter().map(|&y| nearest_label(&atlas_seg, y)).collect())?;
    Ok(SynthOutput {
        truth,
        field,
        mask,
        subject_seg,
        atlas_seg,
        true_sigma,
    })
}

/// `count` smooth bumps for a mask of radius `radius_mm`: centers drawn
/// around the origin with spread radius/4, width radius/3, amplitude
/// N(0, 2 mm) per axis. Drawn from keys disjoint from the noise streams.
pub fn random_bumps(count: usize, radius_mm: f64, seed: u64) -> Vec<Bump> {
    (0..count)
        .map(|i| {
            let g = normals(seed, Domain::SynthNoise, BUMP_KEY_BASE + i as u64, 6);
            Bump {
                center: std::array::from_fn(|a| 0.25 * radius_mm * g[a]),
                width_mm: radius_mm / 3.0,
                amplitude: std::array::from_fn(|a| 2.0 * g[3 + a]),
            }
        })
        .collect()
}

const BUMP_KEY_BASE: u64 = 1 << 32;

/// ‖mean − truth‖² per masked voxel; 0 elsewhere. `truth` is full-grid.
pub fn error_field(field: &MeanStdField, truth: &[Vec<f64>; 3]) -> Result<ScalarVolume> {
    for ch in truth {
        if ch.len() != field.grid.len() {
            return Err(Error::GridMismatch(format!(
                "truth has {} voxels, field grid {}",
                ch.len(),
                field.grid.len()
            )));
        }
    }
    let mut values = vec![0.0; field.grid.len()];
    for n in field.mask.indices() {
        values[n] = (0..3).map(|j| (field.mean[j][n] - truth[j][n]).powi(2)).sum();
    }
    Ok(ScalarVolume {
        grid: field.grid,
        values,
    })
}
