//! NIfTI-1 single-file reader and writer.
//!
//! Only what the engine needs: 2-D and 3-D scalar volumes, the common
//! integer and real data types, sform/qform orientation and comment
//! extensions. Images are written as 32-bit reals and label maps as 32-bit
//! unsigned integers with the label intent.

use super::{AxisSource, DataKind, RawArray, VolumeData, VolumeHeader};
use crate::error::{Error, Result};
use crate::fields::{Grid, Shape};

const HEADER_SIZE: usize = 348;
const INTENT_LABEL: i16 = 1002;
const ECODE_COMMENT: i32 = 6;
const DT_UINT32: i16 = 768;
const DT_FLOAT32: i16 = 16;

struct Reader<'a> {
    b: &'a [u8],
    le: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.b[at..at + N]);
        if !self.le {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
    /// Header real widened through its shortest decimal form, so a stored
    /// `0.8` reads back as `0.8` rather than `0.800000011920929`.
    fn real(&self, at: usize) -> f64 {
        widen(self.f32(at))
    }
}

fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// `(bytes per voxel, integer type, decoder)` for a NIfTI datatype code.
fn element(datatype: i16) -> Result<(usize, bool)> {
    Ok(match datatype {
        2 | 256 => (1, true),
        4 | 512 => (2, true),
        8 | 768 => (4, true),
        1024 | 1280 => (8, true),
        16 => (4, false),
        64 => (8, false),
        other => return Err(format(format!("unsupported NIfTI datatype {other}"))),
    })
}

fn read_value(r: &Reader, datatype: i16, at: usize) -> f64 {
    match datatype {
        2 => r.b[at] as f64,
        256 => r.b[at] as i8 as f64,
        4 => r.i16(at) as f64,
        512 => u16::from_le_bytes(r.bytes(at)) as f64,
        8 => r.i32(at) as f64,
        768 => u32::from_le_bytes(r.bytes(at)) as f64,
        1024 => i64::from_le_bytes(r.bytes(at)) as f64,
        1280 => u64::from_le_bytes(r.bytes(at)) as f64,
        16 => r.f32(at) as f64,
        64 => f64::from_le_bytes(r.bytes(at)),
        _ => unreachable!("checked by element()"),
    }
}

fn quaternion_affine(r: &Reader, pixdim: &[f64; 8]) -> [[f64; 4]; 4] {
    let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let rot = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let scale = [pixdim[1], pixdim[2], pixdim[3] * qfac];
    let offset = [r.real(268), r.real(272), r.real(276)];
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = rot[i][j] * scale[j];
        }
        m[i][3] = offset[i];
    }
    m[3][3] = 1.0;
    m
}

fn det3(m: &[[f64; 4]; 4]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// For each file axis, the world axis it points along and whether it points
/// the negative way.
fn axis_directions(affine: &[[f64; 4]; 4], ndim: usize) -> Option<Vec<(usize, bool)>> {
    let mut used = [false; 3];
    let mut out = Vec::with_capacity(ndim);
    for j in 0..ndim {
        let w = (0..ndim)
            .max_by(|&a, &b| affine[a][j].abs().total_cmp(&affine[b][j].abs()))
            .expect("ndim ≥ 2");
        if used[w] || affine[w][j] == 0.0 {
            return None;
        }
        used[w] = true;
        out.push((w, affine[w][j] < 0.0));
    }
    Some(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<RawArray> {
    if bytes.len() < HEADER_SIZE {
        return Err(format("file is shorter than a NIfTI-1 header"));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32;
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32;
    if !le && !be {
        return Err(format("not a NIfTI-1 file (bad header size)"));
    }
    let r = Reader { b: bytes, le };
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(format("two-file NIfTI (.hdr/.img) is not supported")),
        _ => return Err(format("bad NIfTI-1 magic")),
    }
    let dim: Vec<i64> = (0..8).map(|i| r.i16(40 + 2 * i) as i64).collect();
    let nd = dim[0];
    if !(2..=7).contains(&nd) {
        return Err(format(format!("unsupported dimensionality {nd}")));
    }
    if dim[4..=nd as usize].iter().any(|&d| d > 1) {
        return Err(format("volumes with more than three non-trivial axes are not supported"));
    }
    let ndim = if nd == 2 { 2 } else { 3 };
    let extents: Vec<usize> = dim[1..=ndim]
        .iter()
        .map(|&d| if d >= 1 { Ok(d as usize) } else { Err(format(format!("invalid extent {d}"))) })
        .collect::<Result<_>>()?;
    let datatype = r.i16(70);
    let (size, integer) = element(datatype)?;
    let mut pixdim = [0.0f64; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.real(76 + 4 * i);
    }
    let voxel_size: Vec<f64> = pixdim[1..=ndim].iter().map(|p| p.abs()).collect();
    if voxel_size.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(format(format!("invalid voxel size {voxel_size:?}")));
    }
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(format(format!("invalid data offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let (slope, inter) = (r.f32(112) as f64, r.f32(116) as f64);
    let intent = r.i16(68);

    let mut provenance = None;
    if vox_offset >= 352 && bytes.len() >= 352 && bytes[348] != 0 {
        let mut at = 352;
        while at + 8 <= vox_offset.min(bytes.len()) {
            let esize = r.i32(at) as usize;
            let ecode = r.i32(at + 4);
            if esize < 8 || at + esize > bytes.len() {
                break;
            }
            if ecode == ECODE_COMMENT && provenance.is_none() {
                let raw = &bytes[at + 8..at + esize];
                let end = raw.iter().position(|&c| c == 0).unwrap_or(raw.len());
                provenance = Some(String::from_utf8_lossy(&raw[..end]).into_owned());
            }
            at += esize;
        }
    }

    let mut affine = if r.i16(254) > 0 {
        let mut m = [[0.0; 4]; 4];
        for (row, base) in [280usize, 296, 312].iter().enumerate() {
            for c in 0..4 {
                m[row][c] = r.real(base + 4 * c);
            }
        }
        m[3][3] = 1.0;
        m
    } else if r.i16(252) > 0 {
        quaternion_affine(&r, &pixdim)
    } else {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][i] = if i < ndim { voxel_size[i] } else { 1.0 };
        }
        m[3][3] = 1.0;
        m
    };
    if ndim == 2 {
        // Ignore any through-plane component of a 2-D image.
        for row in affine.iter_mut().take(3) {
            row[2] = 0.0;
        }
        affine[2][2] = 1.0;
    }
    if det3(&affine).abs() < 1e-12 {
        return Err(format("orientation matrix is singular"));
    }

    let count: usize = extents.iter().product();
    let need = vox_offset + count * size;
    if bytes.len() < need {
        return Err(format(format!("data is truncated ({} of {need} bytes)", bytes.len())));
    }
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0) && intent != INTENT_LABEL;
    let file_values: Vec<f64> = (0..count)
        .map(|i| {
            let v = read_value(&r, datatype, vox_offset + i * size);
            if scaled {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();

    let dirs = axis_directions(&affine, ndim).unwrap_or_else(|| {
        log::warn!("oblique orientation without a dominant axis; keeping file axis order");
        (0..ndim).map(|j| (j, false)).collect()
    });
    let mut source = vec![AxisSource { axis: 0, flipped: false }; ndim];
    for (j, &(w, flipped)) in dirs.iter().enumerate() {
        source[w] = AxisSource { axis: j, flipped };
    }
    let canon: Vec<usize> = source.iter().map(|s| extents[s.axis]).collect();
    let canon_vs: Vec<f64> = source.iter().map(|s| voxel_size[s.axis]).collect();
    let mut file_stride = vec![1usize; ndim];
    for j in 1..ndim {
        file_stride[j] = file_stride[j - 1] * extents[j - 1];
    }
    let shape = Shape::new(&canon)?;
    let mut values = vec![0.0f64; count];
    let mut k = vec![0usize; ndim];
    for v in values.iter_mut() {
        let mut lin = 0;
        for c in 0..ndim {
            let s = source[c];
            let i = if s.flipped { canon[c] - 1 - k[c] } else { k[c] };
            lin += i * file_stride[s.axis];
        }
        *v = file_values[lin];
        for c in (0..ndim).rev() {
            k[c] += 1;
            if k[c] < canon[c] {
                break;
            }
            k[c] = 0;
        }
    }
    let mut canon_affine = [[0.0; 4]; 4];
    canon_affine[3][3] = 1.0;
    for row in 0..3 {
        canon_affine[row][3] = affine[row][3];
        for c in 0..3 {
            let (j, flipped) = if c < ndim { (source[c].axis, source[c].flipped) } else { (c, false) };
            let col = affine[row][j];
            canon_affine[row][c] = if flipped { -col } else { col };
            if flipped {
                canon_affine[row][3] += col * (extents[j] - 1) as f64;
            }
        }
    }

    let header = VolumeHeader {
        extents: canon.clone(),
        voxel_size: canon_vs.clone(),
        kind: if intent == INTENT_LABEL { DataKind::Labels } else { DataKind::Image },
        affine: canon_affine,
        orientation: source,
        provenance,
    };
    Ok(RawArray {
        grid: Grid::new(shape, &canon_vs)?,
        values,
        integer: integer && !scaled,
        declared: (intent == INTENT_LABEL).then_some(DataKind::Labels),
        header,
    })
}

fn put_i16(b: &mut [u8], at: usize, v: i16) {
    b[at..at + 2].copy_from_slice(&v.to_le_bytes());
}
fn put_i32(b: &mut [u8], at: usize, v: i32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn put_f32(b: &mut [u8], at: usize, v: f32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// Serialize in canonical axis order (file axis `i` is array axis `i`).
pub(crate) fn encode(data: VolumeData, header: &VolumeHeader) -> Result<Vec<u8>> {
    let grid = data.grid();
    let shape = grid.shape();
    let ndim = shape.ndim();
    let mut h = vec![0u8; HEADER_SIZE];
    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    put_i16(&mut h, 40, ndim as i16);
    for (i, &e) in shape.extents().iter().enumerate() {
        if e > i16::MAX as usize {
            return Err(Error::Range(format!("extent {e} does not fit a NIfTI-1 header")));
        }
        put_i16(&mut h, 42 + 2 * i, e as i16);
    }
    for i in ndim + 1..8 {
        put_i16(&mut h, 40 + 2 * i, 1);
    }
    let (datatype, intent) = match data {
        VolumeData::Image(_) => (DT_FLOAT32, 0),
        VolumeData::Labels(_) => (DT_UINT32, INTENT_LABEL),
    };
    put_i16(&mut h, 68, intent);
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    for (i, &v) in grid.voxel_size().iter().enumerate() {
        put_f32(&mut h, 80 + 4 * i, v as f32);
    }
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // millimetres
    h[148..158].copy_from_slice(b"labelsynth");
    put_i16(&mut h, 254, 2);
    for (row, base) in [280usize, 296, 312].iter().enumerate() {
        for c in 0..4 {
            put_f32(&mut h, base + 4 * c, header.affine[row][c] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut ext = vec![0u8; 4];
    if let Some(text) = &header.provenance {
        ext[0] = 1;
        let esize = (8 + text.len() + 1).div_ceil(16) * 16;
        let mut e = vec![0u8; esize];
        put_i32(&mut e, 0, esize as i32);
        put_i32(&mut e, 4, ECODE_COMMENT);
        e[8..8 + text.len()].copy_from_slice(text.as_bytes());
        ext.extend(e);
    }
    let offset = HEADER_SIZE + ext.len();
    put_f32(&mut h, 108, offset as f32);

    let n = shape.len();
    let mut out = Vec::with_capacity(offset + 4 * n);
    out.extend_from_slice(&h);
    out.extend_from_slice(&ext);
    // Fortran order: the first axis varies fastest.
    let strides = shape.strides();
    let extents = shape.extents();
    let mut k = vec![0usize; ndim];
    for _ in 0..n {
        let lin: usize = k.iter().zip(&strides).map(|(a, b)| a * b).sum();
        match data {
            VolumeData::Image(f) => out.extend_from_slice(&f.values()[lin].to_le_bytes()),
            VolumeData::Labels(l) => out.extend_from_slice(&l.labels()[lin].to_le_bytes()),
        }
        for a in 0..ndim {
            k[a] += 1;
            if k[a] < extents[a] {
                break;
            }
            k[a] = 0;
        }
    }
    Ok(out)
}
