//! A small NIfTI-1 subset: single-file `.nii`, little-endian, uint8 /
//! int16 / float32, axis-aligned sform, no rescaling.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    F32,
}

impl NiftiDtype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDtype::U8),
            4 => Ok(NiftiDtype::I16),
            16 => Ok(NiftiDtype::F32),
            other => Err(Error::UnsupportedDatatype(other as i32)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 => 2,
            NiftiDtype::F32 => 4,
        }
    }

    fn bitpix(self) -> i16 {
        8 * self.size() as i16
    }
}

/// Header fields used by the subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Nifti1Header {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub sform_code: i16,
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

/// Volume with `channels` channel-major x-fastest blocks of `grid.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub grid: Grid,
    pub channels: usize,
    pub dtype: NiftiDtype,
    pub data: Vec<f64>,
}

impl Nifti1Header {
    fn for_volume(vol: &NiftiVolume) -> Self {
        let d = vol.grid.dims();
        let sp = vol.grid.spacing();
        let o = vol.grid.origin();
        let ndim: i16 = if vol.channels > 1 { 4 } else { 3 };
        let mut pixdim = [0f32; 8];
        pixdim[0] = 1.0;
        for a in 0..3 {
            pixdim[a + 1] = sp[a] as f32;
        }
        pixdim[4] = 1.0;
        let mut srow = [[0f32; 4]; 3];
        for a in 0..3 {
            srow[a][a] = sp[a] as f32;
            srow[a][3] = o[a] as f32;
        }
        Nifti1Header {
            dim: [
                ndim,
                d[0] as i16,
                d[1] as i16,
                d[2] as i16,
                vol.channels as i16,
                1,
                1,
                1,
            ],
            datatype: vol.dtype.code(),
            pixdim,
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            sform_code: 1,
            srow,
            magic: *MAGIC,
        }
    }

    fn encode(&self, dtype: NiftiDtype) -> Vec<u8> {
        let mut w = Vec::with_capacity(VOX_OFFSET);
        w.write_i32::<LE>(HEADER_SIZE as i32).unwrap();
        w.extend_from_slice(&[0u8; 34]); // data_type, db_name, extents, session_error
        w.push(b'r'); // regular
        w.push(0); // dim_info
        for v in self.dim {
            w.write_i16::<LE>(v).unwrap();
        }
        w.extend_from_slice(&[0u8; 12]); // intent_p1..3
        w.write_i16::<LE>(0).unwrap(); // intent_code
        w.write_i16::<LE>(self.datatype).unwrap();
        w.write_i16::<LE>(dtype.bitpix()).unwrap();
        w.write_i16::<LE>(0).unwrap(); // slice_start
        for v in self.pixdim {
            w.write_f32::<LE>(v).unwrap();
        }
        w.write_f32::<LE>(self.vox_offset).unwrap();
        w.write_f32::<LE>(self.scl_slope).unwrap();
        w.write_f32::<LE>(self.scl_inter).unwrap();
        w.write_i16::<LE>(0).unwrap(); // slice_end
        w.push(0); // slice_code
        w.push(2); // xyzt_units: mm
        w.extend_from_slice(&[0u8; 24]); // cal_max, cal_min, slice_duration, toffset, glmax, glmin
        let mut descrip = [0u8; 80];
        descrip[..6].copy_from_slice(b"uncreg");
        w.extend_from_slice(&descrip);
        w.extend_from_slice(&[0u8; 24]); // aux_file
        w.write_i16::<LE>(0).unwrap(); // qform_code
        w.write_i16::<LE>(self.sform_code).unwrap();
        w.extend_from_slice(&[0u8; 24]); // quatern_b..qoffset_z
        for row in self.srow {
            for v in row {
                w.write_f32::<LE>(v).unwrap();
            }
        }
        w.extend_from_slice(&[0u8; 16]); // intent_name
        w.extend_from_slice(&self.magic);
        debug_assert_eq!(w.len(), HEADER_SIZE);
        w.extend_from_slice(&[0u8; 4]); // no extensions
        w
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::InvalidHeader(format!(
                "need {HEADER_SIZE} header bytes, got {}",
                bytes.len()
            )));
        }
        let mut r = Cursor::new(bytes);
        let sizeof_hdr = r.read_i32::<LE>().unwrap();
        let dim0_le = i16::from_le_bytes([bytes[40], bytes[41]]);
        let dim0_be = i16::from_be_bytes([bytes[40], bytes[41]]);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
                return Err(Error::BigEndian);
            }
            return Err(Error::InvalidHeader(format!("sizeof_hdr = {sizeof_hdr}")));
        }
        if !(1..=7).contains(&dim0_le) {
            if (1..=7).contains(&dim0_be) {
                return Err(Error::BigEndian);
            }
            return Err(Error::InvalidHeader(format!("dim[0] = {dim0_le}")));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic != MAGIC {
            return Err(Error::BadMagic(format!("{:?}", String::from_utf8_lossy(&magic))));
        }
        r.set_position(40);
        let mut dim = [0i16; 8];
        for d in dim.iter_mut() {
            *d = r.read_i16::<LE>().unwrap();
        }
        r.set_position(70);
        let datatype = r.read_i16::<LE>().unwrap();
        r.set_position(76);
        let mut pixdim = [0f32; 8];
        for p in pixdim.iter_mut() {
            *p = r.read_f32::<LE>().unwrap();
        }
        let vox_offset = r.read_f32::<LE>().unwrap();
        let scl_slope = r.read_f32::<LE>().unwrap();
        let scl_inter = r.read_f32::<LE>().unwrap();
        r.set_position(254);
        let sform_code = r.read_i16::<LE>().unwrap();
        r.set_position(280);
        let mut srow = [[0f32; 4]; 3];
        for row in srow.iter_mut() {
            for v in row.iter_mut() {
                *v = r.read_f32::<LE>().unwrap();
            }
        }
        Ok(Nifti1Header {
            dim,
            datatype,
            pixdim,
            vox_offset,
            scl_slope,
            scl_inter,
            sform_code,
            srow,
            magic,
        })
    }

    fn validate(&self) -> Result<(Grid, usize, NiftiDtype)> {
        let dtype = NiftiDtype::from_code(self.datatype)?;
        if !(self.vox_offset >= VOX_OFFSET as f32) || self.vox_offset.fract() != 0.0 {
            return Err(Error::InvalidHeader(format!("vox_offset = {}", self.vox_offset)));
        }
        if !(self.scl_slope == 0.0 || self.scl_slope == 1.0) || self.scl_inter != 0.0 {
            return Err(Error::NonzeroRescale {
                slope: self.scl_slope,
                inter: self.scl_inter,
            });
        }
        if self.sform_code <= 0 {
            return Err(Error::MissingSform);
        }
        for a in 0..3 {
            for b in 0..3 {
                let v = self.srow[a][b];
                if (a == b && !(v > 0.0)) || (a != b && v != 0.0) {
                    return Err(Error::NonAxisAlignedSform);
                }
            }
        }
        let ndim = self.dim[0] as usize;
        let size = |i: usize| if i <= ndim { self.dim[i].max(0) as usize } else { 1 };
        let dims = [size(1), size(2), size(3)];
        let channels = size(4);
        if (5..=ndim).any(|i| self.dim[i] > 1) {
            return Err(Error::InvalidHeader(
                "dimensions beyond the 4th are not supported".into(),
            ));
        }
        if channels == 0 {
            return Err(Error::InvalidHeader("zero-length 4th dimension".into()));
        }
        let spacing = [1, 2, 3].map(|i| self.pixdim[i].abs() as f64);
        let origin = [0, 1, 2].map(|a| self.srow[a][3] as f64);
        let grid = Grid::new(dims, spacing, origin).map_err(|e| Error::InvalidHeader(e.to_string()))?;
        Ok((grid, channels, dtype))
    }
}

fn check_value(dtype: NiftiDtype, v: f64) -> Result<()> {
    let ok = match dtype {
        NiftiDtype::F32 => v.is_finite() || v.is_nan(),
        NiftiDtype::U8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
        NiftiDtype::I16 => v.fract() == 0.0 && (-32768.0..=32767.0).contains(&v),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "value {v} not representable as {dtype:?}"
        )))
    }
}

pub fn encode_nifti(vol: &NiftiVolume) -> Result<Vec<u8>> {
    let expected = vol.grid.len() * vol.channels;
    if vol.data.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: vol.data.len(),
        });
    }
    if vol.channels == 0 || vol.channels > i16::MAX as usize || vol.grid.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidArgument("dimensions exceed NIfTI-1 limits".into()));
    }
    let header = Nifti1Header::for_volume(vol);
    let mut out = header.encode(vol.dtype);
    out.reserve(expected * vol.dtype.size());
    for &v in &vol.data {
        check_value(vol.dtype, v)?;
        match vol.dtype {
            NiftiDtype::U8 => out.push(v as u8),
            NiftiDtype::I16 => out.write_i16::<LE>(v as i16).unwrap(),
            NiftiDtype::F32 => out.write_f32::<LE>(v as f32).unwrap(),
        }
    }
    Ok(out)
}

pub fn decode_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    let header = Nifti1Header::decode(bytes)?;
    let (grid, channels, dtype) = header.validate()?;
    let offset = header.vox_offset as usize;
    let count = grid.len() * channels;
    let needed = offset + count * dtype.size();
    if bytes.len() < needed {
        return Err(Error::TruncatedPayload {
            expected: needed,
            actual: bytes.len(),
        });
    }
    let mut r = Cursor::new(&bytes[offset..needed]);
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(match dtype {
            NiftiDtype::U8 => r.read_u8().unwrap() as f64,
            NiftiDtype::I16 => r.read_i16::<LE>().unwrap() as f64,
            NiftiDtype::F32 => r.read_f32::<LE>().unwrap() as f64,
        });
    }
    Ok(NiftiVolume {
        grid,
        channels,
        dtype,
        data,
    })
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes)
}

pub fn write_nifti(path: impl AsRef<Path>, vol: &NiftiVolume) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
