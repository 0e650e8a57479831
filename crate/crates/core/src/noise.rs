//! Smooth random fields: value noise, explicitly smoothed Gaussian noise,
//! Perlin gradient noise and fractal sums of Perlin octaves.
//!
//! Every generator consumes an [`RngStream`] and is a pure function of
//! `(grid, spec, stream)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    corner_aligned, gaussian_kernel, minmax_normalize, resample_linear, separable_convolve,
    Grid, ScalarField, Shape, VectorField,
};
use crate::rng::{Draws, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Linearly upsampled low-resolution random grid.
    Value,
    /// Full-resolution Gaussian noise smoothed by separable convolution.
    Smoothed,
    /// Gradient noise on a random lattice.
    Perlin,
    /// Sum of Perlin octaves weighted inversely to frequency.
    Fractal,
}

/// Interpolation weight profile between lattice points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fade {
    #[default]
    Linear,
    /// `6t⁵ − 15t⁴ + 10t³`
    Quintic,
}

impl Fade {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Fade::Linear => t,
            Fade::Quintic => t * t * t * (t * (t * 6.0 - 15.0) + 10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Closed range for the per-axis grid size: low-resolution extent `f_i`
    /// for value noise, control-point count `C_i` for Perlin and the base
    /// octave of fractal noise.
    pub grid: (u32, u32),
    /// Smoothing kernel standard deviation range in mm (smoothed noise).
    pub smoothing_mm: (f64, f64),
    /// Standard deviation range of the underlying Gaussian draws.
    pub amplitude: (f64, f64),
    /// Octave count (fractal noise).
    pub octaves: u32,
    pub fade: Fade,
}

impl NoiseSpec {
    fn base(kind: NoiseKind, grid: (u32, u32)) -> Self {
        Self {
            kind,
            grid,
            smoothing_mm: (0.0, 0.0),
            amplitude: (1.0, 1.0),
            octaves: 1,
            fade: Fade::Linear,
        }
    }

    pub fn value(lo: u32, hi: u32) -> Self {
        Self::base(NoiseKind::Value, (lo, hi))
    }

    pub fn perlin(lo: u32, hi: u32) -> Self {
        Self::base(NoiseKind::Perlin, (lo, hi))
    }

    pub fn smoothed(lo_mm: f64, hi_mm: f64) -> Self {
        Self {
            smoothing_mm: (lo_mm, hi_mm),
            ..Self::base(NoiseKind::Smoothed, (1, 1))
        }
    }

    pub fn fractal(lo: u32, hi: u32, octaves: u32) -> Self {
        Self {
            octaves,
            ..Self::base(NoiseKind::Fractal, (lo, hi))
        }
    }

    pub fn with_fade(mut self, fade: Fade) -> Self {
        self.fade = fade;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.grid;
        let min_grid = match self.kind {
            NoiseKind::Value | NoiseKind::Smoothed => 1,
            NoiseKind::Perlin | NoiseKind::Fractal => 2,
        };
        if lo > hi {
            return Err(Error::Range(format!("grid range [{lo}, {hi}] is not ordered")));
        }
        if lo < min_grid {
            return Err(Error::Range(format!(
                "{:?} noise needs a grid size of at least {min_grid}, got {lo}",
                self.kind
            )));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.smoothing_mm) || self.smoothing_mm.0 < 0.0 {
            return Err(Error::Range(format!(
                "smoothing range {:?} must be ordered and non-negative",
                self.smoothing_mm
            )));
        }
        if !ordered(self.amplitude) || self.amplitude.0 < 0.0 {
            return Err(Error::Range(format!(
                "amplitude range {:?} must be ordered and non-negative",
                self.amplitude
            )));
        }
        if self.octaves < 1 {
            return Err(Error::Range("octave count must be at least 1".into()));
        }
        Ok(())
    }

    fn expect(&self, kind: NoiseKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Range(format!(
                "expected a {kind:?} spec, got {:?}",
                self.kind
            )));
        }
        self.validate()
    }
}

fn draw_counts(d: &mut Draws, spec: &NoiseSpec, ndim: usize) -> Vec<usize> {
    (0..ndim)
        .map(|_| d.uniform_int(spec.grid.0 as u64, spec.grid.1 as u64) as usize)
        .collect()
}

/// Value noise normalized to `[0, 1]`.
pub fn value_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<ScalarField> {
    spec.expect(NoiseKind::Value)?;
    let mut d = rng.draws();
    let shape = grid.shape();
    let counts: Vec<usize> = draw_counts(&mut d, spec, shape.ndim())
        .into_iter()
        .zip(shape.extents())
        .map(|(f, &extent)| {
            if f > extent {
                log::warn!("value-noise grid {f} exceeds axis extent {extent}; clamping");
                extent
            } else {
                f
            }
        })
        .collect();
    let sd = d.uniform(spec.amplitude.0, spec.amplitude.1);
    let low_shape = Shape::new(&counts)?;
    let mut low = vec![0.0f32; low_shape.len()];
    for v in low.iter_mut() {
        *v = (d.normal() * sd) as f32;
    }
    let low = ScalarField::new(grid.resized(&low_shape), low)?;
    let up = resample_linear(&low, shape)?;
    let up = ScalarField::new(grid.clone(), up.into_values())?;
    Ok(minmax_normalize(&up).field)
}

/// Smoothed noise before normalization, with the maximum magnitude of the
/// unsmoothed draw it was rescaled to.
#[derive(Clone, Debug)]
pub struct SmoothedNoise {
    /// `α · (F ∗ κ₁ ∗ … ∗ κ_N)` with `α = max|F| / max|F ∗ κ|`.
    pub field: ScalarField,
    pub raw_max_abs: f32,
    pub sigmas_mm: Vec<f64>,
}

pub fn smoothed_noise_raw(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<SmoothedNoise> {
    spec.expect(NoiseKind::Smoothed)?;
    let mut d = rng.draws();
    let sd = d.uniform(spec.amplitude.0, spec.amplitude.1);
    let sigmas_mm: Vec<f64> = (0..grid.ndim())
        .map(|_| d.uniform(spec.smoothing_mm.0, spec.smoothing_mm.1))
        .collect();
    let kernels = sigmas_mm
        .iter()
        .zip(grid.voxel_size())
        .map(|(&s, &vs)| gaussian_kernel(s, vs))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = vec![0.0f32; grid.len()];
    rng.split(0).fill_normal(&mut raw, sd);
    let raw = ScalarField::new(grid.clone(), raw)?;
    let raw_max_abs = max_abs(raw.values());
    let smooth = separable_convolve(&raw, &kernels)?;
    let smooth_max = max_abs(smooth.values());
    let alpha = if smooth_max > 0.0 {
        raw_max_abs / smooth_max
    } else {
        1.0
    };
    Ok(SmoothedNoise {
        field: smooth.map(|v| v * alpha),
        raw_max_abs,
        sigmas_mm,
    })
}

/// Smoothed Gaussian noise normalized to `[0, 1]`.
pub fn smoothed_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<ScalarField> {
    let s = smoothed_noise_raw(grid, spec, rng)?;
    Ok(minmax_normalize(&s.field).field)
}

fn max_abs(values: &[f32]) -> f32 {
    values
        .par_iter()
        .fold(|| 0.0f32, |m, v| m.max(v.abs()))
        .reduce(|| 0.0, f32::max)
}

/// Cell index and offset of lattice coordinate `u` on an axis of `count` points.
fn axis_cell(u: f64, count: usize) -> (usize, f64) {
    let u = u.clamp(0.0, (count - 1) as f64);
    let k = (u.floor() as usize).min(count - 2);
    (k, u - k as f64)
}

/// A lattice of unit gradient vectors with `counts[i]` control points along
/// axis `i`, evaluated in lattice coordinates `u_i ∈ [0, counts[i] − 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerlinLattice {
    counts: Vec<usize>,
    gradients: Vec<f64>,
    fade: Fade,
}

impl PerlinLattice {
    pub fn sample(counts: &[usize], fade: Fade, d: &mut Draws) -> Result<Self> {
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::Range(format!(
                "Perlin lattices need at least 2 control points per axis, got {counts:?}"
            )));
        }
        let n = counts.len();
        let points: usize = counts.iter().product();
        let mut gradients = Vec::with_capacity(points * n);
        for _ in 0..points {
            gradients.extend(d.unit_vector(n));
        }
        Ok(Self {
            counts: counts.to_vec(),
            gradients,
            fade,
        })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn gradient(&self, point: &[usize]) -> &[f64] {
        let n = self.counts.len();
        let idx = point
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (&p, &c)| acc * c + p);
        &self.gradients[idx * n..idx * n + n]
    }

    fn locate(&self, u: &[f64]) -> ([usize; 3], [f64; 3]) {
        let mut cell = [0usize; 3];
        let mut t = [0f64; 3];
        for (a, (&ua, &c)) in u.iter().zip(&self.counts).enumerate() {
            (cell[a], t[a]) = axis_cell(ua, c);
        }
        (cell, t)
    }

    /// Interpolation weight of each of the `2^N` cell corners at `u`; corner
    /// bit `N−1−a` selects the upper point along axis `a`.
    pub fn weights(&self, u: &[f64]) -> Vec<f64> {
        let n = self.counts.len();
        let (_, t) = self.locate(u);
        (0..1usize << n)
            .map(|corner| {
                (0..n)
                    .map(|a| {
                        let s = self.fade.apply(t[a]);
                        if (corner >> (n - 1 - a)) & 1 == 1 {
                            s
                        } else {
                            1.0 - s
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// `f(M) = Σ_c w_c · v_c · (M − P_c)` over the corners of the cell
    /// containing `u`.
    pub fn eval(&self, u: &[f64]) -> f64 {
        let n = self.counts.len();
        let (cell, t) = self.locate(u);
        let mut s = [0f64; 3];
        for a in 0..n {
            s[a] = self.fade.apply(t[a]);
        }
        let mut sum = 0.0;
        for corner in 0..1usize << n {
            let mut w = 1.0;
            let mut idx = 0;
            let mut offset = [0f64; 3];
            for a in 0..n {
                let bit = (corner >> (n - 1 - a)) & 1;
                w *= if bit == 1 { s[a] } else { 1.0 - s[a] };
                idx = idx * self.counts[a] + cell[a] + bit;
                offset[a] = t[a] - bit as f64;
            }
            if w == 0.0 {
                continue;
            }
            let g = &self.gradients[idx * n..idx * n + n];
            let dot: f64 = g.iter().zip(&offset).map(|(gi, oi)| gi * oi).sum();
            sum += w * dot;
        }
        sum
    }

    /// Evaluate on every voxel of `grid`, mapping voxel `0` and voxel
    /// `extent − 1` to the first and last control point.
    pub fn render(&self, grid: &Grid) -> Result<ScalarField> {
        let shape = grid.shape();
        let n = shape.ndim();
        if self.counts.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{}-D lattice on a {}-D grid",
                self.counts.len(),
                n
            )));
        }
        let coords: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let e = shape.extent(a);
                (0..e)
                    .map(|i| corner_aligned(i, self.counts[a], e))
                    .collect()
            })
            .collect();
        // Per-axis cell, offset and fade of every voxel coordinate.
        let cells: Vec<Vec<(usize, f64, f64)>> = coords
            .iter()
            .zip(&self.counts)
            .map(|(c, &count)| {
                c.iter()
                    .map(|&u| {
                        let (k, t) = axis_cell(u, count);
                        (k, t, self.fade.apply(t))
                    })
                    .collect()
            })
            .collect();
        let last = n - 1;
        let row = shape.extent(last);
        let cl = self.counts[last];
        let mut values = vec![0.0f32; shape.len()];
        values.par_chunks_mut(row).enumerate().for_each(|(r, out)| {
            let mut outer = [(0usize, 0f64, 0f64); 3];
            let mut rem = r;
            for a in (0..last).rev() {
                let e = shape.extent(a);
                outer[a] = cells[a][rem % e];
                rem /= e;
            }
            // Along the row the outer corners are fixed, so each lattice
            // column j contributes a[j] + b[j]·(t_last − bit).
            let mut a = vec![0f64; cl];
            let mut b = vec![0f64; cl];
            for corner in 0..1usize << last {
                let mut w = 1.0;
                let mut base = 0usize;
                let mut offset = [0f64; 3];
                for ax in 0..last {
                    let bit = (corner >> (last - 1 - ax)) & 1;
                    let (k, t, s) = outer[ax];
                    w *= if bit == 1 { s } else { 1.0 - s };
                    base = base * self.counts[ax] + k + bit;
                    offset[ax] = t - bit as f64;
                }
                if w == 0.0 {
                    continue;
                }
                for j in 0..cl {
                    let g = &self.gradients[(base * cl + j) * n..(base * cl + j) * n + n];
                    let dot: f64 = g[..last].iter().zip(&offset).map(|(gi, oi)| gi * oi).sum();
                    a[j] += w * dot;
                    b[j] += w * g[last];
                }
            }
            for (o, &(k, t, s)) in out.iter_mut().zip(&cells[last]) {
                let lo = a[k] + b[k] * t;
                let hi = a[k + 1] + b[k + 1] * (t - 1.0);
                *o = ((1.0 - s) * lo + s * hi) as f32;
            }
        });
        ScalarField::new(grid.clone(), values)
    }
}

/// Raw Perlin noise in `[−1, 1]` with `C_i ~ U(lo, hi)` control points per axis.
pub fn perlin_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<ScalarField> {
    spec.expect(NoiseKind::Perlin)?;
    let mut d = rng.draws();
    let counts = draw_counts(&mut d, spec, grid.ndim());
    PerlinLattice::sample(&counts, spec.fade, &mut d)?.render(grid)
}

/// Normalized octave weights `ω_o ∝ 2^−o`.
pub fn octave_weights(octaves: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..octaves).map(|o| 0.5f64.powi(o as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Fractal Perlin noise normalized to `[0, 1]`. Octave `o` doubles the base
/// control-point count `o` times; octaves whose lattice would exceed an axis
/// extent are dropped.
pub fn fractal_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<ScalarField> {
    spec.expect(NoiseKind::Fractal)?;
    let shape = grid.shape();
    let mut d = rng.draws();
    let base = draw_counts(&mut d, spec, grid.ndim());
    let mut lattices = vec![PerlinLattice::sample(&base, spec.fade, &mut d)?];
    for o in 1..spec.octaves {
        let counts: Vec<usize> = base.iter().map(|&c| c << o).collect();
        if counts.iter().zip(shape.extents()).any(|(&c, &e)| c > e) {
            log::warn!(
                "dropping fractal octaves {o}.. whose lattice {counts:?} exceeds {:?}",
                shape.extents()
            );
            break;
        }
        lattices.push(PerlinLattice::sample(
            &counts,
            spec.fade,
            &mut rng.split(o as u64).draws(),
        )?);
    }
    let weights = octave_weights(lattices.len());
    let mut sum = vec![0.0f32; grid.len()];
    for (lattice, &w) in lattices.iter().zip(&weights) {
        let layer = lattice.render(grid)?;
        sum.par_iter_mut()
            .zip(layer.values().par_iter())
            .for_each(|(s, &v)| *s += w as f32 * v);
    }
    Ok(minmax_normalize(&ScalarField::new(grid.clone(), sum)?).field)
}

/// Any kind of scalar noise, normalized to `[0, 1]`.
pub fn scalar_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<ScalarField> {
    match spec.kind {
        NoiseKind::Value => value_noise(grid, spec, rng),
        NoiseKind::Smoothed => smoothed_noise(grid, spec, rng),
        NoiseKind::Perlin => Ok(minmax_normalize(&perlin_noise(grid, spec, rng)?).field),
        NoiseKind::Fractal => fractal_noise(grid, spec, rng),
    }
}

/// `N` independent normalized noise components; component `c` draws from
/// `rng.split(c)`.
pub fn vector_noise(grid: &Grid, spec: &NoiseSpec, rng: RngStream) -> Result<VectorField> {
    let components = (0..grid.ndim())
        .map(|c| scalar_noise(grid, spec, rng.split(c as u64)).map(ScalarField::into_values))
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(grid.clone(), components)
}
