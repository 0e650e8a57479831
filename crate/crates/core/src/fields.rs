//! N-D grid containers and the resampling, convolution and normalization
//! primitives every generator builds on.
//!
//! Storage is row-major with the last axis varying fastest. All operations
//! are pure and return new fields.
//!
//! Conventions:
//! - convolution pads by replicating edge voxels;
//! - resampling is corner-aligned: the first and last source points map onto
//!   the first and last target points;
//! - nearest-neighbour ties round toward the lower index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a 2-D or 3-D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    extents: Vec<usize>,
}

impl Shape {
    pub fn new(extents: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&extents.len()) {
            return Err(Error::Shape(format!(
                "expected 2 or 3 axes, got {}",
                extents.len()
            )));
        }
        if extents.contains(&0) {
            return Err(Error::Shape(format!("zero extent in {extents:?}")));
        }
        Ok(Self {
            extents: extents.to_vec(),
        })
    }

    pub fn ndim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.extents[axis]
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Extents padded with leading singleton axes to three dimensions.
    pub fn dims3(&self) -> [usize; 3] {
        let mut d = [1; 3];
        let off = 3 - self.ndim();
        d[off..].copy_from_slice(&self.extents);
        d
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.ndim()];
        for a in (0..self.ndim() - 1).rev() {
            s[a] = s[a + 1] * self.extents[a + 1];
        }
        s
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.extents)
            .fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn unravel(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim()];
        for a in (0..self.ndim()).rev() {
            idx[a] = lin % self.extents[a];
            lin /= self.extents[a];
        }
        idx
    }

    /// `(outer, extent, inner)` view of the grid around `axis`.
    pub(crate) fn axis_view(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.extents[..axis].iter().product();
        let inner = self.extents[axis + 1..].iter().product();
        (outer, self.extents[axis], inner)
    }
}

/// A shape together with the physical voxel size in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    shape: Shape,
    voxel_size: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Shape, voxel_size: &[f64]) -> Result<Self> {
        if voxel_size.len() != shape.ndim() {
            return Err(Error::Shape(format!(
                "{} voxel sizes for a {}-D grid",
                voxel_size.len(),
                shape.ndim()
            )));
        }
        if voxel_size.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Range(format!(
                "voxel sizes must be positive, got {voxel_size:?}"
            )));
        }
        Ok(Self {
            shape,
            voxel_size: voxel_size.to_vec(),
        })
    }

    /// Grid with 1 mm isotropic voxels.
    pub fn unit(shape: Shape) -> Self {
        let voxel_size = vec![1.0; shape.ndim()];
        Self { shape, voxel_size }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn voxel_size(&self) -> &[f64] {
        &self.voxel_size
    }

    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The same physical field of view sampled on `target`.
    pub fn resized(&self, target: &Shape) -> Grid {
        let voxel_size = self
            .voxel_size
            .iter()
            .zip(self.shape.extents().iter().zip(target.extents()))
            .map(|(&v, (&from, &to))| v * from as f64 / to as f64)
            .collect();
        Grid {
            shape: target.clone(),
            voxel_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f32>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} voxels",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &Shape {
        self.grid.shape()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.values[self.shape().linear_index(idx)]
    }

    /// `(min, max)` over all voxels.
    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Voxel-wise map into a new field on the same grid.
    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> ScalarField {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f32>) -> ScalarField {
        debug_assert_eq!(values.len(), self.values.len());
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }
}

pub(crate) fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .par_iter()
        .fold(
            || (f32::INFINITY, f32::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
        .reduce(
            || (f32::INFINITY, f32::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        )
}

/// N-component field, one component per spatial axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f32>>,
}

impl VectorField {
    pub fn new(grid: Grid, components: Vec<Vec<f32>>) -> Result<Self> {
        if components.len() != grid.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} components for a {}-D grid",
                components.len(),
                grid.ndim()
            )));
        }
        if components.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::ShapeMismatch(
                "component length differs from voxel count".into(),
            ));
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: Grid) -> Self {
        let components = vec![vec![0.0; grid.len()]; grid.ndim()];
        Self { grid, components }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &Shape {
        self.grid.shape()
    }

    pub fn components(&self) -> &[Vec<f32>] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &[f32] {
        &self.components[c]
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<Vec<f32>> {
        self.components
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest absolute component value.
    pub fn max_abs(&self) -> f32 {
        self.components
            .iter()
            .map(|c| c.par_iter().fold(|| 0.0f32, |m, v| m.max(v.abs())).reduce(|| 0.0, f32::max))
            .fold(0.0, f32::max)
    }

    pub fn scaled(&self, factor: f32) -> VectorField {
        let components = self
            .components
            .iter()
            .map(|c| c.par_iter().map(|v| v * factor).collect())
            .collect();
        VectorField {
            grid: self.grid.clone(),
            components,
        }
    }
}

/// Integer label map with zero-based, contiguous label ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    labels: Vec<u32>,
    label_count: u32,
}

impl LabelVolume {
    /// `label_count` is the number of label ids J; every voxel must be `< J`.
    pub fn new(grid: Grid, labels: Vec<u32>, label_count: u32) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} voxels",
                labels.len(),
                grid.len()
            )));
        }
        if label_count < 2 {
            return Err(Error::Range(format!(
                "a label map needs at least 2 label ids, got {label_count}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                count: label_count as usize,
            });
        }
        Ok(Self {
            grid,
            labels,
            label_count,
        })
    }

    /// Label map whose J is one past its largest label (at least 2).
    pub fn from_labels(grid: Grid, labels: Vec<u32>) -> Result<Self> {
        let count = labels.iter().copied().max().unwrap_or(0).saturating_add(1).max(2);
        Self::new(grid, labels, count)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &Shape {
        self.grid.shape()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    pub fn label_count(&self) -> u32 {
        self.label_count
    }

    pub fn get(&self, idx: &[usize]) -> u32 {
        self.labels[self.shape().linear_index(idx)]
    }

    /// Sorted set of label ids present.
    pub fn present_labels(&self) -> Vec<u32> {
        let mut seen = vec![false; self.label_count as usize];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(l, _)| l as u32)
            .collect()
    }

    pub(crate) fn with_labels(&self, labels: Vec<u32>) -> LabelVolume {
        debug_assert_eq!(labels.len(), self.labels.len());
        LabelVolume {
            grid: self.grid.clone(),
            labels,
            label_count: self.label_count,
        }
    }

    pub(crate) fn with_grid(grid: Grid, labels: Vec<u32>, label_count: u32) -> LabelVolume {
        LabelVolume {
            grid,
            labels,
            label_count,
        }
    }
}

/// Normalized odd-length 1-D convolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
}

impl Kernel1D {
    pub fn identity() -> Self {
        Self { taps: vec![1.0] }
    }

    /// Sampled Gaussian with standard deviation in voxels. The length is
    /// `round(3σ)·2 + 1`.
    pub fn gaussian_voxels(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Range(format!(
                "kernel standard deviation must be non-negative, got {sigma}"
            )));
        }
        let radius = (3.0 * sigma).round() as usize;
        if radius == 0 {
            return Ok(Self::identity());
        }
        let denom = 2.0 * sigma * sigma;
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / denom).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn is_identity(&self) -> bool {
        self.taps.len() == 1
    }
}

/// Gaussian kernel for a standard deviation given in millimetres along an
/// axis with voxel spacing `voxel_size` (mm).
pub fn gaussian_kernel(sigma_mm: f64, voxel_size: f64) -> Result<Kernel1D> {
    if !(sigma_mm >= 0.0) {
        return Err(Error::Range(format!(
            "standard deviation must be non-negative, got {sigma_mm} mm"
        )));
    }
    Kernel1D::gaussian_voxels(sigma_mm / voxel_size)
}

/// Result of min-max normalization. `degenerate` is set when the input was
/// constant, in which case the field is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub field: ScalarField,
    pub degenerate: bool,
}

pub fn minmax_normalize(f: &ScalarField) -> Normalized {
    let (lo, hi) = f.min_max();
    if !(hi > lo) {
        return Normalized {
            field: ScalarField::zeros(f.grid().clone()),
            degenerate: true,
        };
    }
    let range = hi - lo;
    Normalized {
        field: f.map(|v| (v - lo) / range),
        degenerate: false,
    }
}

/// Convolve with one kernel per axis, applied as successive 1-D passes.
pub fn separable_convolve(f: &ScalarField, kernels: &[Kernel1D]) -> Result<ScalarField> {
    let shape = f.shape();
    if kernels.len() != shape.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{} kernels for a {}-D field",
            kernels.len(),
            shape.ndim()
        )));
    }
    for (axis, k) in kernels.iter().enumerate() {
        if k.len() > 2 * shape.extent(axis) {
            return Err(Error::KernelTooLong {
                len: k.len(),
                extent: shape.extent(axis),
                axis,
            });
        }
    }
    let mut current: Option<Vec<f32>> = None;
    for (axis, k) in kernels.iter().enumerate() {
        if k.is_identity() {
            continue;
        }
        let src = current.as_deref().unwrap_or(f.values());
        let mut dst = vec![0.0f32; src.len()];
        convolve_axis(src, &mut dst, shape.axis_view(axis), k);
        current = Some(dst);
    }
    Ok(f.with_values(current.unwrap_or_else(|| f.values().to_vec())))
}

fn convolve_axis(src: &[f32], dst: &mut [f32], (_, n, inner): (usize, usize, usize), k: &Kernel1D) {
    let taps: Vec<f32> = k.taps().iter().map(|&t| t as f32).collect();
    let r = k.radius() as isize;
    let clamp = |j: isize| j.clamp(0, n as isize - 1) as usize;
    if inner == 1 {
        dst.par_chunks_mut(n)
            .zip(src.par_chunks(n))
            .for_each(|(out, line)| {
                let mut padded = Vec::with_capacity(n + 2 * r as usize);
                padded.extend((-r..n as isize + r).map(|j| line[clamp(j)]));
                for (i, o) in out.iter_mut().enumerate() {
                    *o = padded[i..i + taps.len()]
                        .iter()
                        .zip(&taps)
                        .map(|(v, w)| v * w)
                        .sum();
                }
            });
    } else {
        dst.par_chunks_mut(inner).enumerate().for_each(|(row, out)| {
            let (o, i) = (row / n, row % n);
            for (t, &w) in taps.iter().enumerate() {
                let j = clamp(i as isize + t as isize - r);
                let base = (o * n + j) * inner;
                for (acc, &v) in out.iter_mut().zip(&src[base..base + inner]) {
                    *acc += w * v;
                }
            }
        });
    }
}

/// Corner-aligned source coordinate of target index `i`.
#[inline]
pub(crate) fn corner_aligned(i: usize, from: usize, to: usize) -> f64 {
    if to <= 1 || from <= 1 {
        0.0
    } else {
        (i * (from - 1)) as f64 / (to - 1) as f64
    }
}

/// Nearest index with ties toward the lower index.
#[inline]
pub(crate) fn nearest_index(pos: f64) -> isize {
    (pos - 0.5).ceil() as isize
}

/// Multilinear resampling onto `target` (corner-aligned).
pub fn resample_linear(f: &ScalarField, target: &Shape) -> Result<ScalarField> {
    check_target(f.shape(), target)?;
    let mut extents = f.shape().extents().to_vec();
    let mut values: Option<Vec<f32>> = None;
    for axis in 0..extents.len() {
        let (from, to) = (extents[axis], target.extent(axis));
        if from == to {
            continue;
        }
        let src = values.as_deref().unwrap_or(f.values());
        let view = Shape { extents: extents.clone() }.axis_view(axis);
        values = Some(linear_axis(src, view, to));
        extents[axis] = to;
    }
    let grid = f.grid().resized(target);
    Ok(ScalarField {
        grid,
        values: values.unwrap_or_else(|| f.values().to_vec()),
    })
}

fn linear_axis(src: &[f32], (outer, n, inner): (usize, usize, usize), to: usize) -> Vec<f32> {
    let taps: Vec<(usize, usize, f32)> = (0..to)
        .map(|i| {
            let pos = corner_aligned(i, n, to);
            if n == 1 {
                return (0, 0, 0.0);
            }
            let j0 = (pos.floor() as usize).min(n - 2);
            (j0, j0 + 1, (pos - j0 as f64) as f32)
        })
        .collect();
    let mut dst = vec![0.0f32; outer * to * inner];
    dst.par_chunks_mut(inner).enumerate().for_each(|(row, out)| {
        let (o, i) = (row / to, row % to);
        let (j0, j1, t) = taps[i];
        let a = &src[(o * n + j0) * inner..][..inner];
        let b = &src[(o * n + j1) * inner..][..inner];
        for ((d, &va), &vb) in out.iter_mut().zip(a).zip(b) {
            *d = (1.0 - t) * va + t * vb;
        }
    });
    dst
}

fn check_target(from: &Shape, target: &Shape) -> Result<()> {
    if from.ndim() != target.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "cannot resample a {}-D grid onto {}-D",
            from.ndim(),
            target.ndim()
        )));
    }
    Ok(())
}

fn nearest_gather<T: Copy + Send + Sync>(src: &[T], from: &Shape, target: &Shape) -> Vec<T> {
    let maps: Vec<Vec<usize>> = (0..from.ndim())
        .map(|a| {
            let (n, to) = (from.extent(a), target.extent(a));
            (0..to)
                .map(|i| (nearest_index(corner_aligned(i, n, to)).max(0) as usize).min(n - 1))
                .collect()
        })
        .collect();
    let strides = from.strides();
    let last = target.ndim() - 1;
    let row = target.extent(last);
    let mut dst = vec![src[0]; target.len()];
    dst.par_chunks_mut(row).enumerate().for_each(|(r, out)| {
        let mut base = 0;
        let mut rem = r;
        for a in (0..last).rev() {
            let ext = target.extent(a);
            base += maps[a][rem % ext] * strides[a];
            rem /= ext;
        }
        for (o, &j) in out.iter_mut().zip(&maps[last]) {
            *o = src[base + j];
        }
    });
    dst
}

/// Nearest-neighbour resampling for label volumes and scalar fields.
pub trait NearestResample: Sized {
    fn resample_nearest(&self, target: &Shape) -> Result<Self>;
}

impl NearestResample for ScalarField {
    fn resample_nearest(&self, target: &Shape) -> Result<Self> {
        check_target(self.shape(), target)?;
        Ok(ScalarField {
            grid: self.grid.resized(target),
            values: nearest_gather(&self.values, self.shape(), target),
        })
    }
}

impl NearestResample for LabelVolume {
    fn resample_nearest(&self, target: &Shape) -> Result<Self> {
        check_target(self.shape(), target)?;
        Ok(LabelVolume {
            grid: self.grid.resized(target),
            labels: nearest_gather(&self.labels, self.shape(), target),
            label_count: self.label_count,
        })
    }
}

pub fn resample_nearest<T: NearestResample>(v: &T, target: &Shape) -> Result<T> {
    v.resample_nearest(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(extents: &[usize], values: Vec<f32>) -> ScalarField {
        ScalarField::new(Grid::unit(Shape::new(extents).unwrap()), values).unwrap()
    }

    #[test]
    fn shape_validation() {
        assert!(Shape::new(&[4]).is_err());
        assert!(Shape::new(&[4, 0]).is_err());
        assert!(Shape::new(&[1, 2, 3, 4]).is_err());
        let s = Shape::new(&[2, 3, 4]).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.strides(), vec![12, 4, 1]);
        assert_eq!(s.unravel(s.linear_index(&[1, 2, 3])), vec![1, 2, 3]);
        assert_eq!(Shape::new(&[5, 6]).unwrap().dims3(), [1, 5, 6]);
    }

    #[test]
    fn minmax_rescales_affinely() {
        let f = field(&[1, 3], vec![-1.0, 0.0, 1.0]);
        let n = minmax_normalize(&f);
        assert!(!n.degenerate);
        assert_eq!(n.field.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn minmax_identity_on_unit_range() {
        let f = field(&[2, 2], vec![0.0, 0.25, 1.0, 0.7]);
        assert_eq!(minmax_normalize(&f).field, f);
    }

    #[test]
    fn minmax_constant_is_degenerate() {
        let f = field(&[2, 2], vec![3.0; 4]);
        let n = minmax_normalize(&f);
        assert!(n.degenerate);
        assert!(n.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_kernel_lengths() {
        assert_eq!(gaussian_kernel(1.0, 1.0).unwrap().len(), 7);
        assert_eq!(gaussian_kernel(0.0, 1.0).unwrap().taps(), &[1.0]);
        // round(7.2) * 2 + 1
        assert_eq!(gaussian_kernel(2.4, 1.0).unwrap().len(), 15);
        // 2 mm on 0.5 mm voxels is 4 voxels
        assert_eq!(gaussian_kernel(2.0, 0.5).unwrap().len(), 25);
        assert!(gaussian_kernel(-0.1, 1.0).is_err());
    }

    #[test]
    fn gaussian_kernel_normalized_and_symmetric() {
        for sigma in [0.4, 1.0, 2.7, 9.3] {
            let k = gaussian_kernel(sigma, 1.0).unwrap();
            let sum: f64 = k.taps().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            let t = k.taps();
            for i in 0..t.len() {
                assert_eq!(t[i], t[t.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn identity_kernels_leave_field_unchanged() {
        let f = field(&[3, 4], (0..12).map(|v| v as f32).collect());
        let out = separable_convolve(&f, &[Kernel1D::identity(), Kernel1D::identity()]).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn kernel_longer_than_twice_extent_is_rejected() {
        let f = field(&[3, 20], vec![0.0; 60]);
        let k = Kernel1D::gaussian_voxels(2.0).unwrap(); // length 13 > 6
        let err = separable_convolve(&f, &[k, Kernel1D::identity()]).unwrap_err();
        assert!(matches!(err, Error::KernelTooLong { axis: 0, .. }));
    }

    #[test]
    fn linear_midpoint() {
        let f = field(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]);
        let up = resample_linear(&f, &Shape::new(&[3, 3]).unwrap()).unwrap();
        for r in 0..3 {
            assert_eq!(up.get(&[r, 0]), 0.0);
            assert_eq!(up.get(&[r, 1]), 0.5);
            assert_eq!(up.get(&[r, 2]), 1.0);
        }
    }

    #[test]
    fn linear_same_shape_is_identity() {
        let f = field(&[3, 5], (0..15).map(|v| (v as f32).sin()).collect());
        assert_eq!(resample_linear(&f, f.shape()).unwrap(), f);
    }

    #[test]
    fn checkerboard_nearest_downsample_picks_corners() {
        // corner-aligned targets 0 and 3 on each axis
        let values: Vec<f32> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect();
        let f = field(&[4, 4], values);
        let down = resample_nearest(&f, &Shape::new(&[2, 2]).unwrap()).unwrap();
        assert_eq!(down.values(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn nearest_ties_round_down() {
        // 3 -> 2 -> 3: target index 1 of 3 maps to source 0.5 of 2 -> index 0
        let f = field(&[1, 2], vec![10.0, 20.0]);
        let up = resample_nearest(&f, &Shape::new(&[1, 3]).unwrap()).unwrap();
        assert_eq!(up.values(), &[10.0, 10.0, 20.0]);
    }

    #[test]
    fn label_nearest_round_trip_keeps_label_set() {
        let grid = Grid::unit(Shape::new(&[6, 6]).unwrap());
        let labels: Vec<u32> = (0..36).map(|i| ((i / 3) % 2) as u32).collect();
        let v = LabelVolume::new(grid, labels, 2).unwrap();
        let down = resample_nearest(&v, &Shape::new(&[3, 3]).unwrap()).unwrap();
        let up = resample_nearest(&down, v.shape()).unwrap();
        assert!(up.labels().iter().all(|&l| l <= 1));
        assert_eq!(resample_nearest(&v, v.shape()).unwrap(), v);
    }

    #[test]
    fn label_volume_validation() {
        let grid = Grid::unit(Shape::new(&[2, 2]).unwrap());
        assert!(LabelVolume::new(grid.clone(), vec![0, 1, 2, 0], 2).is_err());
        assert!(LabelVolume::new(grid.clone(), vec![0; 4], 1).is_err());
        let v = LabelVolume::from_labels(grid, vec![0, 3, 3, 0]).unwrap();
        assert_eq!(v.label_count(), 4);
        assert_eq!(v.present_labels(), vec![0, 3]);
    }
}
