//! Lossless 2-D slice export.
//!
//! Images are min-max mapped to 8-bit grayscale; label maps go through a
//! fixed colour table with background in black. A 2-D input is exported
//! whole and the axis and index are ignored.

use std::path::Path;

use super::VolumeData;
use crate::error::{Error, Result};
use crate::fields::{min_max, Shape};

/// Fixed colour for a label id.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    // Golden-ratio hue walk; saturation and value alternate so neighbours
    // in id space stay distinguishable.
    let h = (label as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = if label.is_multiple_of(2) { (0.55, 0.95) } else { (0.85, 0.8) };
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Linear indices of the plane `axis = index`, in row-major order, with its
/// height and width.
fn plane(shape: &Shape, axis: usize, index: usize) -> Result<(Vec<usize>, usize, usize)> {
    if shape.ndim() == 2 {
        return Ok(((0..shape.len()).collect(), shape.extent(0), shape.extent(1)));
    }
    if axis >= 3 {
        return Err(Error::Range(format!("axis {axis} does not exist in a 3-D volume")));
    }
    if index >= shape.extent(axis) {
        return Err(Error::Range(format!(
            "slice {index} is outside axis {axis} of extent {}",
            shape.extent(axis)
        )));
    }
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (h, w) = (shape.extent(rest[0]), shape.extent(rest[1]));
    let mut idx = Vec::with_capacity(h * w);
    let mut k = [0usize; 3];
    k[axis] = index;
    for r in 0..h {
        for c in 0..w {
            k[rest[0]] = r;
            k[rest[1]] = c;
            idx.push(shape.linear_index(&k));
        }
    }
    Ok((idx, h, w))
}

/// Encode one slice as PNG bytes.
pub fn slice_png(data: VolumeData, axis: usize, index: usize) -> Result<Vec<u8>> {
    let shape = data.grid().shape();
    let (idx, h, w) = plane(shape, axis, index)?;
    let (pixels, color) = match data {
        VolumeData::Image(f) => {
            let vals: Vec<f32> = idx
                .iter()
                .map(|&i| f.values()[i])
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let (lo, hi) = min_max(&vals);
            let px: Vec<u8> = vals
                .iter()
                .map(|&v| {
                    if hi > lo {
                        (((v - lo) / (hi - lo)) * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect();
            (px, ::png::ColorType::Grayscale)
        }
        VolumeData::Labels(l) => {
            let px: Vec<u8> = idx.iter().flat_map(|&i| label_color(l.labels()[i])).collect();
            (px, ::png::ColorType::Rgb)
        }
    };
    let mut out = Vec::new();
    {
        let mut enc = ::png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(::png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn export_slice(data: VolumeData, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, slice_png(data, axis, index)?)?;
    Ok(())
}
