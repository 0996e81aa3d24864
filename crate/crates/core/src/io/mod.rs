//! Volume files.
//!
//! Two containers are supported: a NIfTI-1 subset ([`nifti`], chosen by a
//! `.nii` extension) and the native `UAF1` raw container ([`uaf`], any
//! other extension). Transform posteriors use their own format
//! ([`posterior`]).
//!
//! Typed readers and writers below map domain types onto channels:
//!
//! | type                | channels                        | sidecars            |
//! |---------------------|---------------------------------|---------------------|
//! | `MeanStdField`      | 6 float (3 mean, 3 std)         | `<stem>.mask.<ext>` |
//! | `CoordField`        | 3 float, background 0           |                     |
//! | field samples       | 3·S float                       |                     |
//! | `LabelVolume`       | 1 label                         |                     |
//! | `Mask`              | 1 uint8                         |                     |
//! | `ScalarVolume`      | 1 float                         |                     |
//! | `LabelDistribution` | L label counts                  | `<path>.labels`     |

pub mod nifti;
pub mod posterior;
pub mod uaf;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::parse_key_values;
use crate::demons::{DemonsMode, NonParamPosterior, SmoothingKernel, VarianceFormula};
use crate::downstream::LabelDistribution;
use crate::error::{Error, Result};
use crate::grid::{CoordField, Grid, LabelVolume, Mask, MeanStdField, ScalarVolume};

pub use nifti::{read_nifti, write_nifti, NiftiDtype, NiftiVolume};
pub use posterior::{read_posterior, write_posterior};
pub use uaf::{read_uaf, write_uaf, UafDtype, UafVolume};

/// How values are stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Float,
    Label,
    Mask,
}

/// Container-independent multi-channel volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    fn expect_channels(&self, path: &Path, want: usize) -> Result<()> {
        if self.channels != want {
            return Err(Error::InvalidHeader(format!(
                "{}: expected {want} channels, found {}",
                path.display(),
                self.channels
            )));
        }
        Ok(())
    }
}

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if is_nifti(path) {
        let v = read_nifti(path)?;
        Ok(Volume {
            grid: v.grid,
            channels: v.channels,
            data: v.data,
        })
    } else {
        let v = read_uaf(path)?;
        Ok(Volume {
            grid: v.grid,
            channels: v.channels,
            data: v.data,
        })
    }
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume, kind: ValueKind) -> Result<()> {
    let path = path.as_ref();
    if is_nifti(path) {
        let dtype = match kind {
            ValueKind::Float => NiftiDtype::F32,
            ValueKind::Label => NiftiDtype::I16,
            ValueKind::Mask => NiftiDtype::U8,
        };
        write_nifti(
            path,
            &NiftiVolume {
                grid: vol.grid,
                channels: vol.channels,
                dtype,
                data: vol.data.clone(),
            },
        )
    } else {
        let dtype = match kind {
            ValueKind::Float => UafDtype::F32,
            ValueKind::Label => UafDtype::U16,
            ValueKind::Mask => UafDtype::U8,
        };
        write_uaf(
            path,
            &UafVolume {
                grid: vol.grid,
                channels: vol.channels,
                dtype,
                data: vol.data.clone(),
            },
        )
    }
}

/// `dir/name.uaf` → `dir/name.mask.uaf`.
pub fn mask_companion(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.mask.{}", ext.to_string_lossy()),
        None => format!("{stem}.mask"),
    };
    path.with_file_name(name)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let data = mask.values().iter().map(|&b| b as u8 as f64).collect();
    write_volume(
        path,
        &Volume {
            grid: mask.grid,
            channels: 1,
            data,
        },
        ValueKind::Mask,
    )
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    v.expect_channels(path, 1)?;
    Mask::new(v.grid, v.data.iter().map(|&x| x != 0.0).collect())
}

pub fn write_label_volume(path: impl AsRef<Path>, labels: &LabelVolume) -> Result<()> {
    let data = labels.labels().iter().map(|&l| l as f64).collect();
    write_volume(
        path,
        &Volume {
            grid: labels.grid,
            channels: 1,
            data,
        },
        ValueKind::Label,
    )
}

pub fn read_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    v.expect_channels(path, 1)?;
    let labels = v
        .data
        .iter()
        .map(|&x| {
            if x.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&x) {
                Ok(x as u16)
            } else {
                Err(Error::InvalidArgument(format!("{}: label value {x}", path.display())))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVolume::new(v.grid, labels)
}

pub fn write_scalar(path: impl AsRef<Path>, vol: &ScalarVolume) -> Result<()> {
    write_volume(
        path,
        &Volume {
            grid: vol.grid,
            channels: 1,
            data: vol.values.clone(),
        },
        ValueKind::Float,
    )
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    v.expect_channels(path, 1)?;
    ScalarVolume::new(v.grid, v.data)
}

/// Writes the 6-channel field and its mask companion.
pub fn write_mean_std_field(path: impl AsRef<Path>, field: &MeanStdField) -> Result<()> {
    let path = path.as_ref();
    let mut data = Vec::with_capacity(6 * field.grid.len());
    for c in field.mean.iter().chain(&field.std) {
        data.extend_from_slice(c);
    }
    write_volume(
        path,
        &Volume {
            grid: field.grid,
            channels: 6,
            data,
        },
        ValueKind::Float,
    )?;
    write_mask(mask_companion(path), &field.mask)
}

pub fn read_mean_std_field(path: impl AsRef<Path>) -> Result<MeanStdField> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    v.expect_channels(path, 6)?;
    let mask = read_mask(mask_companion(path))?;
    v.grid.ensure_same(&mask.grid, "field mask companion")?;
    let mean = std::array::from_fn(|j| v.channel(j).to_vec());
    let std = std::array::from_fn(|j| v.channel(3 + j).to_vec());
    MeanStdField::new(v.grid, mean, std, mask)
}

/// Masked field written over the full grid, background 0.
pub fn write_coord_field(path: impl AsRef<Path>, field: &CoordField, mask: &Mask) -> Result<()> {
    write_samples(path, std::slice::from_ref(field), mask)
}

pub fn read_coord_field(path: impl AsRef<Path>, mask: &Mask) -> Result<CoordField> {
    let path = path.as_ref();
    let mut s = read_samples(path, mask)?;
    if s.len() != 1 {
        return Err(Error::InvalidHeader(format!(
            "{}: expected 3 channels, found {}",
            path.display(),
            3 * s.len()
        )));
    }
    Ok(s.remove(0))
}

/// S field samples as 3·S channels (sample-major, then direction).
pub fn write_samples(path: impl AsRef<Path>, samples: &[CoordField], mask: &Mask) -> Result<()> {
    let mut data = Vec::with_capacity(3 * samples.len() * mask.grid.len());
    for s in samples {
        for c in s.scatter(mask, 0.0)? {
            data.extend(c);
        }
    }
    write_volume(
        path,
        &Volume {
            grid: mask.grid,
            channels: 3 * samples.len(),
            data,
        },
        ValueKind::Float,
    )
}

pub fn read_samples(path: impl AsRef<Path>, mask: &Mask) -> Result<Vec<CoordField>> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    v.grid.ensure_same(&mask.grid, "samples vs mask")?;
    if v.channels == 0 || v.channels % 3 != 0 {
        return Err(Error::InvalidHeader(format!(
            "{}: {} channels is not a multiple of 3",
            path.display(),
            v.channels
        )));
    }
    (0..v.channels / 3)
        .map(|s| {
            let full = std::array::from_fn(|j| v.channel(3 * s + j).to_vec());
            CoordField::gather(&full, mask)
        })
        .collect()
}

/// L count channels plus a `<path>.labels` text sidecar with the sample
/// count and label set. The mask is the set of voxels with nonzero counts.
pub fn write_label_distribution(path: impl AsRef<Path>, dist: &LabelDistribution) -> Result<()> {
    let path = path.as_ref();
    if dist.samples > u16::MAX as u32 {
        return Err(Error::InvalidArgument(format!(
            "{} samples exceed the uint16 count range",
            dist.samples
        )));
    }
    let l = dist.num_labels();
    let n = dist.grid.len();
    let mut data = vec![0.0; l * n];
    for (m, &vox) in dist.mask.indices().iter().enumerate() {
        for (k, &c) in dist.voxel_counts(m).iter().enumerate() {
            data[k * n + vox] = c as f64;
        }
    }
    write_volume(
        path,
        &Volume {
            grid: dist.grid,
            channels: l,
            data,
        },
        ValueKind::Label,
    )?;
    let mut side = format!("samples = {}\nlabels =", dist.samples);
    for lab in &dist.label_set {
        let _ = write!(side, " {lab}");
    }
    side.push('\n');
    let sidecar = with_suffix(path, ".labels");
    std::fs::write(&sidecar, side).map_err(|e| Error::io(sidecar, e))
}

pub fn read_label_distribution(path: impl AsRef<Path>) -> Result<LabelDistribution> {
    let path = path.as_ref();
    let sidecar = with_suffix(path, ".labels");
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let rec = parse_key_values(&text)?;
    let samples: u32 = record_get(&rec, "samples")?
        .parse()
        .map_err(|_| Error::InvalidHeader("label sidecar: bad sample count".into()))?;
    let label_set = record_get(&rec, "labels")?
        .split_whitespace()
        .map(|s| s.parse::<u16>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidHeader("label sidecar: bad label".into()))?;
    let v = read_volume(path)?;
    v.expect_channels(path, label_set.len())?;
    let n = v.grid.len();
    let l = label_set.len();
    let mask = Mask::new(
        v.grid,
        (0..n).map(|i| (0..l).any(|k| v.data[k * n + i] != 0.0)).collect(),
    )?;
    let mut counts = Vec::with_capacity(mask.count() * l);
    for i in mask.indices() {
        counts.extend((0..l).map(|k| v.data[k * n + i] as u32));
    }
    LabelDistribution::from_counts(mask, label_set, counts, samples)
}

fn record_get<'a>(rec: &'a [(String, String)], key: &str) -> Result<&'a str> {
    rec.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::InvalidHeader(format!("missing key {key:?}")))
}

/// File names used for a non-parametric posterior stored under `prefix`.
pub fn nonparam_paths(prefix: &Path) -> [PathBuf; 4] {
    [".mean.uaf", ".var.uaf", ".mask.uaf", ".meta"].map(|s| with_suffix(prefix, s))
}

pub fn write_nonparam(prefix: impl AsRef<Path>, p: &NonParamPosterior) -> Result<()> {
    let [mean, var, mask, meta] = nonparam_paths(prefix.as_ref());
    write_coord_field(mean, &p.mean, &p.mask)?;
    write_coord_field(var, &p.variance, &p.mask)?;
    write_mask(mask, &p.mask)?;
    let kernel = serde_json::to_string(&p.kernel).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mode = match p.mode {
        DemonsMode::Plain => "plain",
        DemonsMode::Precision => "precision",
    };
    let formula = match p.variance_formula {
        VarianceFormula::SelfConsistent => "self_consistent",
        VarianceFormula::PlainKernel => "plain_kernel",
    };
    let mut text = format!("mode = {mode}\nvariance_formula = {formula}\nkernel = {kernel}\n");
    if let SmoothingKernel::Gaussian { sigma_mm, truncation } = p.kernel {
        let _ = write!(text, "kernel_sigma_mm = {sigma_mm}\ntruncation = {truncation}\n");
    }
    std::fs::write(&meta, text).map_err(|e| Error::io(meta, e))
}

pub fn read_nonparam(prefix: impl AsRef<Path>) -> Result<NonParamPosterior> {
    let [mean, var, mask, meta] = nonparam_paths(prefix.as_ref());
    let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let rec = parse_key_values(&text)?;
    let mode = match record_get(&rec, "mode")? {
        "plain" => DemonsMode::Plain,
        "precision" => DemonsMode::Precision,
        other => return Err(Error::InvalidHeader(format!("unknown demons mode {other:?}"))),
    };
    let variance_formula = match record_get(&rec, "variance_formula")? {
        "self_consistent" => VarianceFormula::SelfConsistent,
        "plain_kernel" => VarianceFormula::PlainKernel,
        other => return Err(Error::InvalidHeader(format!("unknown variance formula {other:?}"))),
    };
    let kernel: SmoothingKernel =
        serde_json::from_str(record_get(&rec, "kernel")?).map_err(|e| Error::InvalidHeader(format!("kernel: {e}")))?;
    let mask = read_mask(mask)?;
    Ok(NonParamPosterior {
        grid: mask.grid,
        mean: read_coord_field(mean, &mask)?,
        variance: read_coord_field(var, &mask)?,
        mask,
        mode,
        variance_formula,
        kernel,
    })
}
