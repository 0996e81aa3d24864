//! `UAF1` raw field container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "UAF1"
//!      4    12  dims     3 × u32
//!     16    12  spacing  3 × f32 (mm)
//!     28    12  origin   3 × f32 (mm)
//!     40     4  channels u32
//!     44     1  dtype    u8: 0 = f32, 1 = u16, 2 = u8
//!     45     …  payload, channel-major, x-fastest within a channel
//! ```
//!
//! Everything is little-endian.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"UAF1";
pub const HEADER_LEN: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UafDtype {
    F32 = 0,
    U16 = 1,
    U8 = 2,
}

impl UafDtype {
    pub fn size(self) -> usize {
        match self {
            UafDtype::F32 => 4,
            UafDtype::U16 => 2,
            UafDtype::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(UafDtype::F32),
            1 => Ok(UafDtype::U16),
            2 => Ok(UafDtype::U8),
            other => Err(Error::UnsupportedDatatype(other as i32)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFieldHeader {
    pub dims: [u32; 3],
    pub spacing: [f32; 3],
    pub origin: [f32; 3],
    pub channels: u32,
    pub dtype: UafDtype,
}

impl RawFieldHeader {
    pub fn payload_len(&self) -> usize {
        self.channels as usize * self.dims.iter().map(|&d| d as usize).product::<usize>() * self.dtype.size()
    }
}

/// Decoded container: `channels` blocks of `grid.len()` values.
#[derive(Debug, Clone, PartialEq)]
pub struct UafVolume {
    pub grid: Grid,
    pub channels: usize,
    pub dtype: UafDtype,
    pub data: Vec<f64>,
}

impl UafVolume {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }
}

pub fn encode_uaf(vol: &UafVolume) -> Result<Vec<u8>> {
    let n = vol.grid.len();
    if vol.data.len() != n * vol.channels {
        return Err(Error::LengthMismatch {
            expected: n * vol.channels,
            actual: vol.data.len(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + vol.data.len() * vol.dtype.size());
    out.extend_from_slice(MAGIC);
    for d in vol.grid.dims() {
        out.write_u32::<LE>(u32::try_from(d).map_err(|_| Error::InvalidArgument("dimension too large".into()))?)
            .unwrap();
    }
    for s in vol.grid.spacing() {
        out.write_f32::<LE>(s as f32).unwrap();
    }
    for o in vol.grid.origin() {
        out.write_f32::<LE>(o as f32).unwrap();
    }
    out.write_u32::<LE>(vol.channels as u32).unwrap();
    out.push(vol.dtype as u8);
    for &v in &vol.data {
        match vol.dtype {
            UafDtype::F32 => out.write_f32::<LE>(v as f32).unwrap(),
            UafDtype::U16 => {
                if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("value {v} is not a u16")));
                }
                out.write_u16::<LE>(v as u16).unwrap()
            }
            UafDtype::U8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("value {v} is not a u8")));
                }
                out.push(v as u8)
            }
        }
    }
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<RawFieldHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::InvalidHeader(format!(
            "UAF1 header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(format!("{:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let mut r = Cursor::new(&bytes[4..HEADER_LEN]);
    let dims = [(); 3].map(|_| r.read_u32::<LE>().unwrap());
    let spacing = [(); 3].map(|_| r.read_f32::<LE>().unwrap());
    let origin = [(); 3].map(|_| r.read_f32::<LE>().unwrap());
    let channels = r.read_u32::<LE>().unwrap();
    let dtype = UafDtype::from_code(r.read_u8().unwrap())?;
    Ok(RawFieldHeader {
        dims,
        spacing,
        origin,
        channels,
        dtype,
    })
}

pub fn decode_uaf(bytes: &[u8]) -> Result<UafVolume> {
    let h = decode_header(bytes)?;
    let grid = Grid::new(
        h.dims.map(|d| d as usize),
        h.spacing.map(|s| s as f64),
        h.origin.map(|o| o as f64),
    )
    .map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != h.payload_len() {
        if payload.len() < h.payload_len() {
            return Err(Error::TruncatedPayload {
                expected: h.payload_len(),
                actual: payload.len(),
            });
        }
        return Err(Error::InvalidHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - h.payload_len()
        )));
    }
    let count = grid.len() * h.channels as usize;
    let mut r = Cursor::new(payload);
    let data = (0..count)
        .map(|_| match h.dtype {
            UafDtype::F32 => r.read_f32::<LE>().unwrap() as f64,
            UafDtype::U16 => r.read_u16::<LE>().unwrap() as f64,
            UafDtype::U8 => r.read_u8().unwrap() as f64,
        })
        .collect();
    Ok(UafVolume {
        grid,
        channels: h.channels as usize,
        dtype: h.dtype,
        data,
    })
}

pub fn read_uaf(path: impl AsRef<Path>) -> Result<UafVolume> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_uaf(&bytes)
}

pub fn write_uaf(path: impl AsRef<Path>, vol: &UafVolume) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_uaf(vol)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
