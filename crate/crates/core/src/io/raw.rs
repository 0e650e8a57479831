//! Minimal self-describing binary grid format.
//!
//! All numbers little-endian:
//!
//! | field        | type                  |
//! |--------------|-----------------------|
//! | magic        | `b"LSYNRAW\0"`        |
//! | version      | u16 (= 1)             |
//! | ndim         | u8 (2 or 3)           |
//! | dtype        | u8 (1 = f32, 2 = u32) |
//! | extents      | ndim × u64            |
//! | voxel size   | ndim × f64 (mm)       |
//! | metadata len | u32                   |
//! | metadata     | UTF-8 text            |
//! | payload      | row-major values      |

use super::{AxisSource, DataKind, RawArray, VolumeData, VolumeHeader};
use crate::error::{Error, Result};
use crate::fields::{Grid, Shape};

pub const MAGIC: &[u8; 8] = b"LSYNRAW\0";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;
const DTYPE_U32: u8 = 2;

pub(crate) fn encode(data: VolumeData, metadata: Option<&str>) -> Result<Vec<u8>> {
    let grid = data.grid();
    let meta = metadata.unwrap_or("").as_bytes();
    let mut out = Vec::with_capacity(64 + meta.len() + 4 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(grid.ndim() as u8);
    out.push(match data {
        VolumeData::Image(_) => DTYPE_F32,
        VolumeData::Labels(_) => DTYPE_U32,
    });
    for &e in grid.shape().extents() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in grid.voxel_size() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta);
    match data {
        VolumeData::Image(f) => f.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        VolumeData::Labels(l) => l.labels().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .b
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Format("raw volume is truncated".into()))?;
        self.at += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<RawArray> {
    let mut c = Cursor { b: bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("bad raw volume magic".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported raw volume version {version}")));
    }
    let [ndim] = c.array::<1>()?;
    let [dtype] = c.array::<1>()?;
    let ndim = ndim as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::Format(format!("unsupported dimensionality {ndim}")));
    }
    let extents = (0..ndim)
        .map(|_| Ok(u64::from_le_bytes(c.array()?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let voxel_size = (0..ndim)
        .map(|_| Ok(f64::from_le_bytes(c.array()?)))
        .collect::<Result<Vec<_>>>()?;
    let meta_len = u32::from_le_bytes(c.array()?) as usize;
    let meta = String::from_utf8(c.take(meta_len)?.to_vec())
        .map_err(|_| Error::Format("raw volume metadata is not UTF-8".into()))?;
    let shape = Shape::new(&extents).map_err(|e| Error::Format(e.to_string()))?;
    let grid = Grid::new(shape, &voxel_size).map_err(|e| Error::Format(e.to_string()))?;
    let payload = c.take(4 * grid.len())?;
    let (values, kind): (Vec<f64>, DataKind) = match dtype {
        DTYPE_F32 => (
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DataKind::Image,
        ),
        DTYPE_U32 => (
            payload
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DataKind::Labels,
        ),
        other => return Err(Error::Format(format!("unknown raw dtype {other}"))),
    };
    let mut header = VolumeHeader::for_grid(&grid, kind);
    header.orientation = (0..ndim).map(|axis| AxisSource { axis, flipped: false }).collect();
    header.provenance = (!meta.is_empty()).then_some(meta);
    Ok(RawArray {
        grid,
        values,
        integer: kind == DataKind::Labels,
        declared: Some(kind),
        header,
    })
}
