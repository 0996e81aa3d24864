//! `UTP1` transform-posterior file.
//!
//! Layout (little-endian):
//!
//! ```text
//! "UTP1"
//! u32 n, n bytes      basis spec as JSON
//! u8                  weighted flag
//! u32 B               total columns
//! u32 A, A × u32      active columns, ascending
//! 3 × {
//!     f64             ε
//!     B × f64         c^μ (0 on pruned columns)
//!     A × u32         envelope start row of each column of R
//!     … f64           packed R, column by column within the envelope
//! }
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg::Skyline;
use crate::wls::{DirectionFit, TransformPosterior};

pub const MAGIC: &[u8; 4] = b"UTP1";

fn header_err(msg: impl Into<String>) -> Error {
    Error::InvalidHeader(msg.into())
}

fn trunc(_: std::io::Error) -> Error {
    header_err("posterior file ends early")
}

pub fn encode_posterior(p: &TransformPosterior) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&p.basis).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut w = Vec::new();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LE>(spec.len() as u32).unwrap();
    w.extend_from_slice(&spec);
    w.push(p.weighted as u8);
    w.write_u32::<LE>(p.columns as u32).unwrap();
    w.write_u32::<LE>(p.active.len() as u32).unwrap();
    for &c in &p.active {
        w.write_u32::<LE>(c as u32).unwrap();
    }
    for d in &p.directions {
        w.write_f64::<LE>(d.epsilon).unwrap();
        for &c in &d.coef_mean {
            w.write_f64::<LE>(c).unwrap();
        }
        for &f in d.factor.first() {
            w.write_u32::<LE>(f as u32).unwrap();
        }
        for &v in d.factor.values() {
            w.write_f64::<LE>(v).unwrap();
        }
    }
    Ok(w)
}

pub fn decode_posterior(bytes: &[u8]) -> Result<TransformPosterior> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let got = &bytes[..bytes.len().min(4)];
        return Err(Error::BadMagic(format!("{:?}", String::from_utf8_lossy(got))));
    }
    let mut r = Cursor::new(&bytes[4..]);
    let n = r.read_u32::<LE>().map_err(trunc)? as usize;
    let mut spec = vec![0u8; n];
    r.read_exact(&mut spec).map_err(trunc)?;
    let basis: BasisSpec = serde_json::from_slice(&spec).map_err(|e| header_err(format!("basis spec: {e}")))?;
    let weighted = match r.read_u8().map_err(trunc)? {
        0 => false,
        1 => true,
        other => return Err(header_err(format!("weighted flag {other}"))),
    };
    let columns = r.read_u32::<LE>().map_err(trunc)? as usize;
    let a = r.read_u32::<LE>().map_err(trunc)? as usize;
    if a > columns {
        return Err(header_err(format!("{a} active columns out of {columns}")));
    }
    let mut active = Vec::with_capacity(a);
    for _ in 0..a {
        active.push(r.read_u32::<LE>().map_err(trunc)? as usize);
    }
    if active.windows(2).any(|w| w[0] >= w[1]) || active.last().is_some_and(|&c| c >= columns) {
        return Err(header_err("active columns not ascending or out of range"));
    }
    let mut dirs = Vec::with_capacity(3);
    for j in 0..3 {
        let epsilon = r.read_f64::<LE>().map_err(trunc)?;
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(header_err(format!("direction {j}: epsilon {epsilon}")));
        }
        let mut coef_mean = Vec::with_capacity(columns);
        for _ in 0..columns {
            coef_mean.push(r.read_f64::<LE>().map_err(trunc)?);
        }
        let mut first = Vec::with_capacity(a);
        for k in 0..a {
            let f = r.read_u32::<LE>().map_err(trunc)? as usize;
            if f > k {
                return Err(header_err(format!(
                    "direction {j}: envelope row {f} below diagonal {k}"
                )));
            }
            first.push(f);
        }
        let count: usize = first.iter().enumerate().map(|(k, &f)| k - f + 1).sum();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.read_f64::<LE>().map_err(trunc)?);
        }
        let factor = Skyline::from_parts(first, values)?;
        if let Some(k) = factor.diagonal().iter().position(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(header_err(format!(
                "direction {j}: factor diagonal {k} is not positive"
            )));
        }
        dirs.push(DirectionFit {
            coef_mean,
            factor,
            epsilon,
        });
    }
    if (r.position() as usize) != bytes.len() - 4 {
        return Err(header_err("trailing bytes after posterior"));
    }
    let directions: [DirectionFit; 3] = dirs.try_into().expect("three directions");
    Ok(TransformPosterior {
        basis,
        columns,
        active,
        weighted,
        directions,
    })
}

pub fn read_posterior(path: impl AsRef<Path>) -> Result<TransformPosterior> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_posterior(&bytes)
}

pub fn write_posterior(path: impl AsRef<Path>, p: &TransformPosterior) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_posterior(p)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
