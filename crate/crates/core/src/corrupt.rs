//! Randomized image corruptions applied to the mean image.
//!
//! Each stage is a pure function of its input, settings and stream, and
//! returns the corrupted field together with a record of what it drew.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::fields::{
    gaussian_kernel, minmax_normalize, resample_linear, resample_nearest, Grid, Kernel1D,
    LabelVolume, ScalarField, Shape,
};
use crate::noise::{scalar_noise, NoiseSpec};
use crate::rng::{Draws, RngStream};
use crate::spatial::CropMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasVariant {
    /// `x ⊙ (1 − ‖B‖·B̂)` with `B̂` normalized smooth noise.
    #[default]
    NormalizedDrop,
    /// `x ⊙ exp(G)` with `G` upsampled low-resolution Gaussian noise.
    ExpGaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasSettings {
    pub variant: BiasVariant,
    /// Maximum intensity drop range, as a fraction.
    pub drop: (f64, f64),
    /// Noise for `B̂`; its grid range also sets the low-resolution size of
    /// the exponential variant.
    pub noise: NoiseSpec,
    /// Standard deviation of `G` for the exponential variant.
    pub exp_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub variant: BiasVariant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_sd: Option<f64>,
}

fn ordered(name: &str, (a, b): (f64, f64)) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(Error::Range(format!("{name} range [{a}, {b}] is not ordered")));
    }
    Ok(())
}

/// Multiplicative bias field for `grid`.
pub fn sample_bias_field(grid: &Grid, settings: &BiasSettings, rng: RngStream) -> Result<(ScalarField, BiasRecord)> {
    match settings.variant {
        BiasVariant::NormalizedDrop => {
            let (a, b) = settings.drop;
            ordered("bias drop", settings.drop)?;
            if a < 0.0 || b > 1.0 {
                return Err(ConfigError::single(
                    "corruption.bias_drop_pct",
                    format!("a drop range of [{a}, {b}] can produce negative intensities; it must lie within [0, 1]"),
                )
                .into());
            }
            let drop = rng.draws().uniform(a, b);
            let record = BiasRecord {
                variant: settings.variant,
                drop: Some(drop),
                exp_sd: None,
            };
            if drop == 0.0 {
                return Ok((ScalarField::filled(grid.clone(), 1.0), record));
            }
            let hat = scalar_noise(grid, &settings.noise, rng.split(1))?;
            let dropf = drop as f32;
            Ok((hat.map(|b| 1.0 - dropf * b), record))
        }
        BiasVariant::ExpGaussian => {
            let field = exp_gaussian_field(grid, settings.noise.grid, settings.exp_sd, rng)?;
            let record = BiasRecord {
                variant: settings.variant,
                drop: None,
                exp_sd: Some(settings.exp_sd),
            };
            Ok((field, record))
        }
    }
}

/// `exp(G)` with `G ~ N(0, sd²)` drawn on a low-resolution grid whose per-axis
/// size is drawn from `grid_range`, then linearly upsampled.
pub fn exp_gaussian_field(grid: &Grid, grid_range: (u32, u32), sd: f64, rng: RngStream) -> Result<ScalarField> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::Range(format!("bias standard deviation {sd} must be non-negative")));
    }
    let (lo, hi) = grid_range;
    if lo < 1 || lo > hi {
        return Err(Error::Range(format!("bias grid range [{lo}, {hi}] is invalid")));
    }
    let mut d = rng.draws();
    let counts: Vec<usize> = grid
        .shape()
        .extents()
        .iter()
        .map(|&e| (d.uniform_int(lo as u64, hi as u64) as usize).min(e))
        .collect();
    let low_shape = Shape::new(&counts)?;
    let mut g = vec![0.0f32; low_shape.len()];
    rng.split(1).fill_normal(&mut g, sd);
    let low = ScalarField::new(grid.resized(&low_shape), g)?;
    Ok(resample_linear(&low, grid.shape())?.map(f32::exp))
}

pub fn apply_bias(x: &ScalarField, settings: &BiasSettings, rng: RngStream) -> Result<(ScalarField, BiasRecord)> {
    let (field, record) = sample_bias_field(x.grid(), settings, rng)?;
    let values = x
        .values()
        .par_iter()
        .zip(field.values().par_iter())
        .map(|(v, m)| v * m)
        .collect();
    Ok((x.with_values(values), record))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlurSettings {
    /// Per-axis kernel standard deviation range in mm.
    pub sd_mm: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurRecord {
    pub sd_mm: Vec<f64>,
}

/// Separable Gaussian blur with `σ_i ~ U(a_κ, b_κ)` mm per axis. Axes of
/// extent 1 are left alone.
pub fn apply_blur(x: &ScalarField, settings: &BlurSettings, rng: RngStream) -> Result<(ScalarField, BlurRecord)> {
    ordered("blur", settings.sd_mm)?;
    if settings.sd_mm.0 < 0.0 {
        return Err(Error::Range("blur standard deviation must be non-negative".into()));
    }
    let mut d = rng.draws();
    let grid = x.grid();
    let sd_mm: Vec<f64> = (0..grid.ndim())
        .map(|a| {
            let s = d.uniform(settings.sd_mm.0, settings.sd_mm.1);
            if grid.shape().extent(a) == 1 {
                0.0
            } else {
                s
            }
        })
        .collect();
    let kernels = sd_mm
        .iter()
        .zip(grid.voxel_size())
        .map(|(&s, &v)| gaussian_kernel(s, v))
        .collect::<Result<Vec<Kernel1D>>>()?;
    let out = if kernels.iter().all(Kernel1D::is_identity) {
        x.clone()
    } else {
        crate::fields::separable_convolve(x, &kernels)?
    };
    Ok((out, BlurRecord { sd_mm }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSettings {
    /// Standard deviation range as a fraction of the unit intensity range.
    pub sd: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub sd: f64,
}

/// `x ⊕ n` with `n ~ N(0, σ_n²)` i.i.d. per voxel.
pub fn add_noise(x: &ScalarField, settings: &NoiseSettings, rng: RngStream) -> Result<(ScalarField, NoiseRecord)> {
    ordered("noise", settings.sd)?;
    if settings.sd.0 < 0.0 {
        return Err(Error::Range("noise standard deviation must be non-negative".into()));
    }
    let sd = rng.draws().uniform(settings.sd.0, settings.sd.1);
    if sd == 0.0 {
        return Ok((x.clone(), NoiseRecord { sd }));
    }
    let mut n = vec![0.0f32; x.values().len()];
    rng.split(1).fill_normal(&mut n, sd);
    n.par_iter_mut().zip(x.values().par_iter()).for_each(|(n, &v)| *n += v);
    Ok((x.with_values(n), NoiseRecord { sd }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaSettings {
    pub gamma: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRecord {
    pub gamma: f64,
    /// The input was constant and normalized to zeros.
    pub degenerate: bool,
}

/// Min-max renormalize to `[0, 1]`, then raise to `γ ~ U(a_γ, b_γ)`.
pub fn apply_gamma(x: &ScalarField, settings: &GammaSettings, rng: RngStream) -> Result<(ScalarField, GammaRecord)> {
    ordered("gamma", settings.gamma)?;
    if settings.gamma.0 <= 0.0 {
        return Err(Error::Range("gamma bounds must be positive".into()));
    }
    let gamma = rng.draws().uniform(settings.gamma.0, settings.gamma.1);
    Ok(gamma_with(x, gamma))
}

/// Gamma stage with a fixed exponent.
pub fn gamma_with(x: &ScalarField, gamma: f64) -> (ScalarField, GammaRecord) {
    let n = minmax_normalize(x);
    let record = GammaRecord {
        gamma,
        degenerate: n.degenerate,
    };
    if gamma == 1.0 {
        return (n.field, record);
    }
    let g = gamma as f32;
    (n.field.map(|v| v.powf(g)), record)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Linear,
    Nearest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleSettings {
    /// Per-axis real-valued factor range, `≥ 1`.
    pub factor: (f64, f64),
    pub interpolation: Interpolation,
    /// Also round-trip the label map (nearest-neighbour both ways).
    pub labels: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownsampleRecord {
    pub factors: Vec<f64>,
    pub low_shape: Vec<usize>,
}

/// Low-resolution extent `max(1, round(n / d))`.
pub fn low_resolution_extent(extent: usize, factor: f64) -> usize {
    ((extent as f64 / factor).round() as usize).max(1)
}

/// Downsample by `d_i ~ U(a_d, b_d)` per axis, then upsample back to the
/// original shape.
pub fn downsample_upsample(
    x: &ScalarField,
    labels: &LabelVolume,
    settings: &DownsampleSettings,
    rng: RngStream,
) -> Result<(ScalarField, LabelVolume, DownsampleRecord)> {
    ordered("downsampling", settings.factor)?;
    if settings.factor.0 < 1.0 {
        return Err(Error::Range("downsampling factors must be at least 1".into()));
    }
    if x.shape() != labels.shape() {
        return Err(Error::ShapeMismatch("image and label map differ in shape".into()));
    }
    let mut d = rng.draws();
    let shape = x.shape();
    let factors: Vec<f64> = (0..shape.ndim())
        .map(|_| d.uniform(settings.factor.0, settings.factor.1))
        .collect();
    let low: Vec<usize> = shape
        .extents()
        .iter()
        .zip(&factors)
        .map(|(&e, &f)| low_resolution_extent(e, f))
        .collect();
    let record = DownsampleRecord {
        factors,
        low_shape: low.clone(),
    };
    if low == shape.extents() {
        return Ok((x.clone(), labels.clone(), record));
    }
    let low_shape = Shape::new(&low)?;
    let image = match settings.interpolation {
        Interpolation::Linear => resample_linear(&resample_linear(x, &low_shape)?, shape)?,
        Interpolation::Nearest => resample_nearest(&resample_nearest(x, &low_shape)?, shape)?,
    };
    let labels = if settings.labels {
        resample_nearest(&resample_nearest(labels, &low_shape)?, shape)?
    } else {
        labels.clone()
    };
    Ok((image, labels, record))
}

/// `x ⊙ m`.
pub fn apply_mask(x: &ScalarField, mask: &CropMask) -> Result<ScalarField> {
    if x.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} applied to image {:?}",
            mask.shape().extents(),
            x.shape().extents()
        )));
    }
    if mask.is_full() {
        return Ok(x.clone());
    }
    let m = mask.broadcast();
    let values = x
        .values()
        .par_iter()
        .zip(m.par_iter())
        .map(|(&v, &k)| if k == 0 { 0.0 } else { v })
        .collect();
    Ok(x.with_values(values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClearSettings {
    /// Closed range for the number of cleared slices.
    pub count: (u32, u32),
    /// Fixed axis, or a random one when unset.
    pub axis: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearRecord {
    pub axis: usize,
    pub slices: Vec<usize>,
}

fn draw_clear(shape: &Shape, settings: &ClearSettings, d: &mut Draws) -> Result<ClearRecord> {
    let (lo, hi) = settings.count;
    if lo > hi {
        return Err(Error::Range(format!("slice count range [{lo}, {hi}] is not ordered")));
    }
    let axis = match settings.axis {
        Some(a) if a >= shape.ndim() => {
            return Err(Error::Range(format!("axis {a} does not exist in a {}-D image", shape.ndim())))
        }
        Some(a) => a,
        None => d.index(shape.ndim()),
    };
    let k = d.uniform_int(lo as u64, hi as u64) as usize;
    let mut slices = d.distinct(shape.extent(axis), k);
    slices.sort_unstable();
    Ok(ClearRecord { axis, slices })
}

/// Zero `k` distinct full slices along one axis.
pub fn clear_slices(x: &ScalarField, settings: &ClearSettings, rng: RngStream) -> Result<(ScalarField, ClearRecord)> {
    let record = draw_clear(x.shape(), settings, &mut rng.draws())?;
    if record.slices.is_empty() {
        return Ok((x.clone(), record));
    }
    let (_, n, inner) = x.shape().axis_view(record.axis);
    let mut cleared = vec![false; n];
    for &s in &record.slices {
        cleared[s] = true;
    }
    let mut values = x.values().to_vec();
    values.par_chunks_mut(inner).enumerate().for_each(|(i, run)| {
        if cleared[i % n] {
            run.iter_mut().for_each(|v| *v = 0.0);
        }
    });
    Ok((x.with_values(values), record))
}

/// Zero every voxel whose label is not in `brain_labels`.
pub fn simulate_skullstrip(x: &ScalarField, labels: &LabelVolume, brain_labels: &[u32]) -> Result<ScalarField> {
    if brain_labels.is_empty() {
        return Err(Error::Range("skull stripping needs at least one brain label".into()));
    }
    if x.shape() != labels.shape() {
        return Err(Error::ShapeMismatch("image and label map differ in shape".into()));
    }
    let mut keep = vec![false; labels.label_count() as usize];
    for &l in brain_labels {
        if let Some(k) = keep.get_mut(l as usize) {
            *k = true;
        }
    }
    let values = x
        .values()
        .par_iter()
        .zip(labels.labels().par_iter())
        .map(|(&v, &l)| if keep[l as usize] { v } else { 0.0 })
        .collect();
    Ok(x.with_values(values))
}
