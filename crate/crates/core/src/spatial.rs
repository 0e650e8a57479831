//! Random spatial augmentation.
//!
//! A transform maps every output voxel `M` to the location it samples in the
//! input, so a warped label map is `s_x = s ∘ Φ` with `Φ = φ ∘ A`: the affine
//! `A` is applied first and the deformation `φ` displaces the affinely mapped
//! point.
//!
//! Affine parameters live in millimetres about the centre of the field of
//! view. Rotations are right-handed, in degrees, applied intrinsically about
//! the x, then y, then z axis. Shears are upper-triangular with unit diagonal;
//! a shear factor of 1 is the identity. Deformation fields store their
//! displacements in millimetres.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{nearest_index, Grid, LabelVolume, ScalarField, Shape, VectorField};
use crate::noise::{vector_noise, NoiseSpec};
use crate::rng::RngStream;

/// Square homogeneous matrix of size `N + 1 ≤ 4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homogeneous {
    size: usize,
    m: [[f64; 4]; 4],
}

impl Homogeneous {
    pub fn identity(ndim: usize) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate().take(ndim + 1) {
            row[i] = 1.0;
        }
        Self { size: ndim + 1, m }
    }

    pub fn ndim(&self) -> usize {
        self.size - 1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.m[r][c]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|r| self.m[r][..self.size].to_vec()).collect()
    }

    fn from_linear(ndim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut h = Self::identity(ndim);
        for r in 0..ndim {
            for c in 0..ndim {
                h.m[r][c] = f(r, c);
            }
        }
        h
    }

    fn translation(t: &[f64]) -> Self {
        let n = t.len();
        let mut h = Self::identity(n);
        for (r, &v) in t.iter().enumerate() {
            h.m[r][n] = v;
        }
        h
    }

    fn diagonal(d: &[f64]) -> Self {
        Self::from_linear(d.len(), |r, c| if r == c { d[r] } else { 0.0 })
    }

    pub fn mul(&self, other: &Homogeneous) -> Homogeneous {
        let n = self.size;
        let mut out = Homogeneous { size: n, m: [[0.0; 4]; 4] };
        for r in 0..n {
            for c in 0..n {
                out.m[r][c] = (0..n).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        out
    }

    /// Apply to a point (length `N`).
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let n = self.ndim();
        (0..n)
            .map(|r| (0..n).map(|c| self.m[r][c] * p[c]).sum::<f64>() + self.m[r][n])
            .collect()
    }
}

/// Sampled affine parameters. In 2-D there is one rotation and one shear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub translation_mm: Vec<f64>,
    pub rotation_deg: Vec<f64>,
    /// Scale factors, 1 = identity.
    pub scaling: Vec<f64>,
    /// Shear factors, 1 = identity.
    pub shear: Vec<f64>,
}

impl AffineParams {
    pub fn identity(ndim: usize) -> Self {
        let angles = if ndim == 3 { 3 } else { 1 };
        Self {
            translation_mm: vec![0.0; ndim],
            rotation_deg: vec![0.0; angles],
            scaling: vec![1.0; ndim],
            shear: vec![1.0; angles],
        }
    }
}

/// Uniform sampling bounds for the affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineRanges {
    pub translation_mm: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub scaling: (f64, f64),
    pub shear: (f64, f64),
}

impl AffineRanges {
    pub fn identity() -> Self {
        Self {
            translation_mm: (0.0, 0.0),
            rotation_deg: (0.0, 0.0),
            scaling: (1.0, 1.0),
            shear: (1.0, 1.0),
        }
    }
}

/// `A = T ∘ R ∘ Z ∘ E` in millimetre space.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    params: AffineParams,
    matrix: Homogeneous,
}

fn rotation(ndim: usize, deg: &[f64]) -> Homogeneous {
    let r: Vec<f64> = deg.iter().map(|d| d.to_radians()).collect();
    if ndim == 2 {
        let (s, c) = r[0].sin_cos();
        return Homogeneous::from_linear(2, |i, j| [[c, -s], [s, c]][i][j]);
    }
    let (sx, cx) = r[0].sin_cos();
    let (sy, cy) = r[1].sin_cos();
    let (sz, cz) = r[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let to_h = |m: [[f64; 3]; 3]| Homogeneous::from_linear(3, |i, j| m[i][j]);
    to_h(rx).mul(&to_h(ry)).mul(&to_h(rz))
}

fn shear(ndim: usize, e: &[f64]) -> Homogeneous {
    let mut h = Homogeneous::identity(ndim);
    if ndim == 2 {
        h.m[0][1] = e[0] - 1.0;
    } else {
        h.m[0][1] = e[0] - 1.0;
        h.m[0][2] = e[1] - 1.0;
        h.m[1][2] = e[2] - 1.0;
    }
    h
}

impl AffineTransform {
    pub fn identity(ndim: usize) -> Self {
        Self {
            params: AffineParams::identity(ndim),
            matrix: Homogeneous::identity(ndim),
        }
    }

    pub fn from_params(params: AffineParams) -> Result<Self> {
        let n = params.translation_mm.len();
        let angles = if n == 3 { 3 } else { 1 };
        if !(2..=3).contains(&n)
            || params.scaling.len() != n
            || params.rotation_deg.len() != angles
            || params.shear.len() != angles
        {
            return Err(Error::Shape(format!("inconsistent affine parameters {params:?}")));
        }
        let t = Homogeneous::translation(&params.translation_mm);
        let r = rotation(n, &params.rotation_deg);
        let z = Homogeneous::diagonal(&params.scaling);
        let e = shear(n, &params.shear);
        let matrix = t.mul(&r).mul(&z).mul(&e);
        Ok(Self { params, matrix })
    }

    pub fn params(&self) -> &AffineParams {
        &self.params
    }

    pub fn matrix(&self) -> &Homogeneous {
        &self.matrix
    }

    pub fn ndim(&self) -> usize {
        self.matrix.ndim()
    }

    /// The transform expressed between voxel indices of `grid`, pivoting
    /// about the centre of the field of view.
    pub fn voxel_matrix(&self, grid: &Grid) -> Homogeneous {
        let n = grid.ndim();
        let centre: Vec<f64> = grid
            .shape()
            .extents()
            .iter()
            .map(|&e| (e as f64 - 1.0) / 2.0)
            .collect();
        let neg_centre: Vec<f64> = centre.iter().map(|c| -c).collect();
        let to_mm = Homogeneous::diagonal(grid.voxel_size());
        let inv: Vec<f64> = grid.voxel_size().iter().map(|v| 1.0 / v).collect();
        let to_vox = Homogeneous::diagonal(&inv);
        debug_assert_eq!(n, self.ndim());
        Homogeneous::translation(&centre)
            .mul(&to_vox)
            .mul(&self.matrix)
            .mul(&to_mm)
            .mul(&Homogeneous::translation(&neg_centre))
    }
}

pub fn sample_affine(ndim: usize, ranges: &AffineRanges, rng: RngStream) -> Result<AffineTransform> {
    for (name, (a, b)) in [
        ("translation", ranges.translation_mm),
        ("rotation", ranges.rotation_deg),
        ("scaling", ranges.scaling),
        ("shear", ranges.shear),
    ] {
        if !(a <= b) {
            return Err(Error::Range(format!("{name} range [{a}, {b}] is not ordered")));
        }
    }
    if ranges.scaling.0 <= 0.0 {
        return Err(Error::Range("scale factors must be positive".into()));
    }
    let angles = if ndim == 3 { 3 } else { 1 };
    let mut d = rng.draws();
    let mut draw = |n: usize, (a, b): (f64, f64)| (0..n).map(|_| d.uniform(a, b)).collect::<Vec<_>>();
    let params = AffineParams {
        translation_mm: draw(ndim, ranges.translation_mm),
        rotation_deg: draw(angles, ranges.rotation_deg),
        scaling: draw(ndim, ranges.scaling),
        shear: draw(angles, ranges.shear),
    };
    AffineTransform::from_params(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpKind {
    Elastic,
    SvfIntegrated,
    Identity,
}

/// Dense displacement field, in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub displacement: VectorField,
    pub kind: WarpKind,
    pub strength_mm: f64,
}

impl DeformationField {
    pub fn identity(grid: &Grid) -> Self {
        Self {
            displacement: VectorField::zeros(grid.clone()),
            kind: WarpKind::Identity,
            strength_mm: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.displacement.grid()
    }

    pub fn is_zero(&self) -> bool {
        self.displacement.components().iter().flatten().all(|&v| v == 0.0)
    }

    /// The pure affine transform as a dense field.
    pub fn from_affine(affine: &AffineTransform, grid: &Grid) -> Result<Self> {
        compose(&DeformationField::identity(grid), affine)
    }
}

/// Three-component displacement in voxel units with a leading singleton axis
/// for 2-D grids.
struct VoxelField {
    dims: [usize; 3],
    comps: [Vec<f32>; 3],
}

impl VoxelField {
    fn from_mm(field: &VectorField) -> Self {
        let grid = field.grid();
        let dims = grid.shape().dims3();
        let off = 3 - grid.ndim();
        let mut comps: [Vec<f32>; 3] = Default::default();
        for (slot, comp) in comps.iter_mut().enumerate() {
            *comp = if slot < off {
                vec![0.0; grid.len()]
            } else {
                let a = slot - off;
                let inv = (1.0 / grid.voxel_size()[a]) as f32;
                field.component(a).par_iter().map(|v| v * inv).collect()
            };
        }
        Self { dims, comps }
    }

    fn into_mm(self, grid: &Grid) -> VectorField {
        let off = 3 - grid.ndim();
        let components = self
            .comps
            .into_iter()
            .skip(off)
            .enumerate()
            .map(|(a, c)| {
                let vs = grid.voxel_size()[a] as f32;
                c.into_par_iter().map(|v| v * vs).collect()
            })
            .collect();
        VectorField::new(grid.clone(), components).expect("consistent grid")
    }

    fn scale(&mut self, factor: f32) {
        for c in self.comps.iter_mut() {
            c.par_iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn max_abs(&self) -> f32 {
        self.comps
            .iter()
            .map(|c| c.par_iter().fold(|| 0.0f32, |m, v| m.max(v.abs())).reduce(|| 0.0, f32::max))
            .fold(0.0, f32::max)
    }
}

#[inline]
fn axis_lerp(p: f32, n: usize) -> (usize, usize, f32) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let p = p.clamp(0.0, (n - 1) as f32);
    let i0 = (p as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f32)
}

/// Trilinear weights and linear indices at `p`, clamped to the grid.
#[inline]
fn trilinear(dims: [usize; 3], p: [f32; 3]) -> ([usize; 8], [f32; 8]) {
    let (z0, z1, tz) = axis_lerp(p[0], dims[0]);
    let (y0, y1, ty) = axis_lerp(p[1], dims[1]);
    let (x0, x1, tx) = axis_lerp(p[2], dims[2]);
    let idx = |z: usize, y: usize, x: usize| (z * dims[1] + y) * dims[2] + x;
    (
        [
            idx(z0, y0, x0),
            idx(z0, y0, x1),
            idx(z0, y1, x0),
            idx(z0, y1, x1),
            idx(z1, y0, x0),
            idx(z1, y0, x1),
            idx(z1, y1, x0),
            idx(z1, y1, x1),
        ],
        [
            (1.0 - tz) * (1.0 - ty) * (1.0 - tx),
            (1.0 - tz) * (1.0 - ty) * tx,
            (1.0 - tz) * ty * (1.0 - tx),
            (1.0 - tz) * ty * tx,
            tz * (1.0 - ty) * (1.0 - tx),
            tz * (1.0 - ty) * tx,
            tz * ty * (1.0 - tx),
            tz * ty * tx,
        ],
    )
}

#[inline]
fn gather(values: &[f32], idx: &[usize; 8], w: &[f32; 8]) -> f32 {
    idx.iter().zip(w).map(|(&i, &wi)| values[i] * wi).sum()
}

/// Run `f(z, y, x, out_index)` for every voxel of a padded 3-D grid, in
/// parallel over rows, writing three outputs per voxel.
fn map_voxels3(dims: [usize; 3], f: impl Fn([f32; 3]) -> [f32; 3] + Sync) -> [Vec<f32>; 3] {
    let len = dims.iter().product::<usize>();
    let row = dims[2];
    let mut out: [Vec<f32>; 3] = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let [o0, o1, o2] = &mut out;
    o0.par_chunks_mut(row)
        .zip(o1.par_chunks_mut(row))
        .zip(o2.par_chunks_mut(row))
        .enumerate()
        .for_each(|(r, ((a, b), c))| {
            let z = (r / dims[1]) as f32;
            let y = (r % dims[1]) as f32;
            for x in 0..row {
                let v = f([z, y, x as f32]);
                a[x] = v[0];
                b[x] = v[1];
                c[x] = v[2];
            }
        });
    out
}

/// Per-voxel displacement steps from the velocity magnitude: the smallest
/// count for which the first half-step stays below half a voxel.
pub fn required_svf_steps(velocity: &VectorField) -> u32 {
    let max = VoxelField::from_mm(velocity).max_abs() as f64;
    let mut steps = 0;
    while max / 2f64.powi(steps as i32) >= 0.5 {
        steps += 1;
    }
    steps
}

/// Integrate a stationary velocity field (mm) over unit time by scaling and
/// squaring: halve `steps` times, then compose the field with itself `steps`
/// times. Fails if any interior Jacobian determinant is not positive.
pub fn integrate_svf(velocity: &VectorField, steps: u32) -> Result<DeformationField> {
    if steps == 0 {
        return Err(Error::Range("integration needs at least one step".into()));
    }
    let grid = velocity.grid();
    let mut u = VoxelField::from_mm(velocity);
    u.scale(0.5f32.powi(steps as i32));
    let dims = u.dims;
    // Interleaved components keep the eight corner reads of a lookup together.
    let len = dims.iter().product::<usize>();
    let mut cur: Vec<[f32; 3]> = (0..len).map(|i| [u.comps[0][i], u.comps[1][i], u.comps[2][i]]).collect();
    let mut next = vec![[0f32; 3]; len];
    for _ in 0..steps {
        next.par_chunks_mut(dims[2]).enumerate().for_each(|(r, out)| {
            let z = (r / dims[1]) as f32;
            let y = (r % dims[1]) as f32;
            for (x, o) in out.iter_mut().enumerate() {
                let d = cur[r * dims[2] + x];
                let (idx, w) = trilinear(dims, [z + d[0], y + d[1], x as f32 + d[2]]);
                let mut acc = [0f32; 3];
                for (&i, &wi) in idx.iter().zip(&w) {
                    let v = cur[i];
                    acc[0] += v[0] * wi;
                    acc[1] += v[1] * wi;
                    acc[2] += v[2] * wi;
                }
                *o = [d[0] + acc[0], d[1] + acc[1], d[2] + acc[2]];
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    for (c, comp) in u.comps.iter_mut().enumerate() {
        comp.par_iter_mut().zip(cur.par_iter()).for_each(|(v, d)| *v = d[c]);
    }
    let min_det = min_jacobian_voxel(&u);
    if !(min_det > 0.0) {
        return Err(Error::Folding { min_det });
    }
    let strength_mm = velocity.max_abs() as f64;
    Ok(DeformationField {
        displacement: u.into_mm(grid),
        kind: WarpKind::SvfIntegrated,
        strength_mm,
    })
}

fn jacobian_at(u: &VoxelField, z: usize, y: usize, x: usize) -> f64 {
    let dims = u.dims;
    let at = |c: usize, z: usize, y: usize, x: usize| u.comps[c][(z * dims[1] + y) * dims[2] + x] as f64;
    let pos = [z, y, x];
    let mut jac = [[0.0f64; 3]; 3];
    for (axis, row) in (0..3).map(|a| (a, a)) {
        let n = dims[axis];
        for c in 0..3 {
            let d = if n == 1 {
                0.0
            } else {
                let (lo, hi) = (pos[axis].saturating_sub(1), (pos[axis] + 1).min(n - 1));
                let mut a = pos;
                let mut b = pos;
                a[axis] = lo;
                b[axis] = hi;
                (at(c, b[0], b[1], b[2]) - at(c, a[0], a[1], a[2])) / (hi - lo) as f64
            };
            jac[c][row] = d + if c == axis { 1.0 } else { 0.0 };
        }
    }
    jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
}

fn min_jacobian_voxel(u: &VoxelField) -> f64 {
    let dims = u.dims;
    let strides = [dims[1] * dims[2], dims[2], 1];
    // Interior voxels only: central differences over two voxels, or zero
    // along singleton axes.
    let range = |a: usize| if dims[a] == 1 { 0..1 } else { 1..dims[a] - 1 };
    range(0)
        .flat_map(|z| range(1).map(move |y| (z, y)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(z, y)| {
            let mut min = f64::INFINITY;
            for x in range(2) {
                let i = z * strides[0] + y * strides[1] + x;
                let mut j = [[0f64; 3]; 3];
                for (a, &st) in strides.iter().enumerate() {
                    for c in 0..3 {
                        let d = if dims[a] == 1 {
                            0.0
                        } else {
                            (u.comps[c][i + st] as f64 - u.comps[c][i - st] as f64) / 2.0
                        };
                        j[c][a] = d + if c == a { 1.0 } else { 0.0 };
                    }
                }
                let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                    - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                    + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                min = min.min(det);
            }
            min
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Jacobian determinant of `x ↦ x + φ(x)` at every voxel (central
/// differences, one-sided at the border).
pub fn jacobian_determinant(field: &DeformationField) -> ScalarField {
    let u = VoxelField::from_mm(&field.displacement);
    let dims = u.dims;
    let mut values = vec![0.0f32; dims.iter().product()];
    values.par_chunks_mut(dims[2]).enumerate().for_each(|(r, out)| {
        let (z, y) = (r / dims[1], r % dims[1]);
        for (x, o) in out.iter_mut().enumerate() {
            *o = jacobian_at(&u, z, y, x) as f32;
        }
    });
    ScalarField::new(field.grid().clone(), values).expect("consistent grid")
}

/// Smallest Jacobian determinant over voxels away from the grid border.
pub fn min_interior_jacobian(field: &DeformationField) -> f64 {
    min_jacobian_voxel(&VoxelField::from_mm(&field.displacement))
}

/// `Φ = φ ∘ A`: each output voxel is mapped by `A`, then displaced by `φ`
/// sampled (multilinearly, edge-clamped) at the affinely mapped location.
pub fn compose(phi: &DeformationField, affine: &AffineTransform) -> Result<DeformationField> {
    let grid = phi.grid();
    if affine.ndim() != grid.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{}-D affine with a {}-D deformation",
            affine.ndim(),
            grid.ndim()
        )));
    }
    let v = affine.voxel_matrix(grid);
    let off = 3 - grid.ndim();
    // Padded 3x4 voxel matrix; the singleton axis maps to itself.
    let mut m = [[0.0f64; 4]; 3];
    for r in 0..3 {
        if r < off {
            m[r][r] = 1.0;
            continue;
        }
        for c in off..3 {
            m[r][c] = v.get(r - off, c - off);
        }
        m[r][3] = v.get(r - off, grid.ndim());
    }
    let u = VoxelField::from_mm(&phi.displacement);
    let dims = u.dims;
    let zero = phi.is_zero();
    let comps = map_voxels3(dims, |p| {
        let q: [f64; 3] = std::array::from_fn(|r| {
            m[r][0] * p[0] as f64 + m[r][1] * p[1] as f64 + m[r][2] * p[2] as f64 + m[r][3]
        });
        let mut d = [q[0] - p[0] as f64, q[1] - p[1] as f64, q[2] - p[2] as f64];
        if !zero {
            let (idx, w) = trilinear(dims, [q[0] as f32, q[1] as f32, q[2] as f32]);
            for (c, dc) in d.iter_mut().enumerate() {
                *dc += gather(&u.comps[c], &idx, &w) as f64;
            }
        }
        [d[0] as f32, d[1] as f32, d[2] as f32]
    });
    let combined = VoxelField { dims, comps };
    Ok(DeformationField {
        displacement: combined.into_mm(grid),
        kind: phi.kind,
        strength_mm: phi.strength_mm,
    })
}

fn sample_positions(field: &DeformationField) -> VoxelField {
    VoxelField::from_mm(&field.displacement)
}

fn check_grid(a: &Shape, b: &Shape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "transform on {:?} applied to {:?}",
            b.extents(),
            a.extents()
        )));
    }
    Ok(())
}

/// `s ∘ Φ` with nearest-neighbour sampling; samples outside the field of
/// view take label 0.
pub fn warp_labels(s: &LabelVolume, phi: &DeformationField) -> Result<LabelVolume> {
    check_grid(s.shape(), phi.grid().shape())?;
    let u = sample_positions(phi);
    let dims = u.dims;
    let src = s.labels();
    let mut out = vec![0u32; src.len()];
    out.par_chunks_mut(dims[2]).enumerate().for_each(|(r, row)| {
        let (z, y) = (r / dims[1], r % dims[1]);
        for (x, o) in row.iter_mut().enumerate() {
            let i = r * dims[2] + x;
            let p = [
                z as f64 + u.comps[0][i] as f64,
                y as f64 + u.comps[1][i] as f64,
                x as f64 + u.comps[2][i] as f64,
            ];
            let mut lin = 0usize;
            let mut inside = true;
            for a in 0..3 {
                let k = nearest_index(p[a]);
                if k < 0 || k >= dims[a] as isize {
                    inside = false;
                    break;
                }
                lin = lin * dims[a] + k as usize;
            }
            *o = if inside { src[lin] } else { 0 };
        }
    });
    Ok(s.with_labels(out))
}

/// `x ∘ Φ` with multilinear sampling; samples outside the field of view are 0.
pub fn warp_image(x: &ScalarField, phi: &DeformationField) -> Result<ScalarField> {
    check_grid(x.shape(), phi.grid().shape())?;
    const EPS: f32 = 1e-4;
    let u = sample_positions(phi);
    let dims = u.dims;
    let src = x.values();
    let mut out = vec![0.0f32; src.len()];
    out.par_chunks_mut(dims[2]).enumerate().for_each(|(r, row)| {
        let (z, y) = (r / dims[1], r % dims[1]);
        for (xi, o) in row.iter_mut().enumerate() {
            let i = r * dims[2] + xi;
            let p = [
                z as f32 + u.comps[0][i],
                y as f32 + u.comps[1][i],
                xi as f32 + u.comps[2][i],
            ];
            let inside = (0..3).all(|a| p[a] >= -EPS && p[a] <= (dims[a] - 1) as f32 + EPS);
            *o = if inside {
                let (idx, w) = trilinear(dims, p);
                gather(src, &idx, &w)
            } else {
                0.0
            };
        }
    });
    Ok(x.with_values(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpMode {
    /// Scaled noise used directly as displacement.
    Elastic,
    /// Scaled noise used as a stationary velocity field and integrated.
    Svf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpSettings {
    pub strength_mm: (f64, f64),
    pub noise: NoiseSpec,
    pub mode: WarpMode,
    pub svf_steps: u32,
}

/// What was drawn for the nonlinear warp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpRecord {
    pub mode: WarpMode,
    pub strength_mm: f64,
    pub svf_steps: Option<u32>,
}

/// `‖φ‖ · φ̂` with every component of `φ̂` min-max normalized to `[0, 1]`.
fn scaled_noise_field(grid: &Grid, settings: &WarpSettings, rng: RngStream) -> Result<(VectorField, f64)> {
    let (a, b) = settings.strength_mm;
    if !(0.0 <= a && a <= b) {
        return Err(Error::Range(format!("warp strength [{a}, {b}] must be ordered and non-negative")));
    }
    let strength = rng.draws().uniform(a, b);
    if strength == 0.0 {
        return Ok((VectorField::zeros(grid.clone()), 0.0));
    }
    let hat = vector_noise(grid, &settings.noise, rng.split(1))?;
    let s = strength as f32;
    let components = hat
        .into_components()
        .into_iter()
        .map(|c| c.into_par_iter().map(|v| v * s).collect())
        .collect();
    Ok((VectorField::new(grid.clone(), components)?, strength))
}

/// Elastic displacement `φ = ‖φ‖ · φ̂`, `‖φ‖ ~ U(a_φ, b_φ)`.
pub fn sample_elastic(grid: &Grid, settings: &WarpSettings, rng: RngStream) -> Result<DeformationField> {
    let (displacement, strength_mm) = scaled_noise_field(grid, settings, rng)?;
    Ok(DeformationField {
        displacement,
        kind: if strength_mm == 0.0 {
            WarpKind::Identity
        } else {
            WarpKind::Elastic
        },
        strength_mm,
    })
}

/// Draw the nonlinear component according to `settings.mode`.
pub fn sample_warp(grid: &Grid, settings: &WarpSettings, rng: RngStream) -> Result<(DeformationField, WarpRecord)> {
    match settings.mode {
        WarpMode::Elastic => {
            let field = sample_elastic(grid, settings, rng)?;
            let record = WarpRecord {
                mode: WarpMode::Elastic,
                strength_mm: field.strength_mm,
                svf_steps: None,
            };
            Ok((field, record))
        }
        WarpMode::Svf => {
            let (velocity, strength) = scaled_noise_field(grid, settings, rng)?;
            if strength == 0.0 {
                let record = WarpRecord {
                    mode: WarpMode::Svf,
                    strength_mm: 0.0,
                    svf_steps: None,
                };
                return Ok((DeformationField::identity(grid), record));
            }
            let steps = settings.svf_steps.max(required_svf_steps(&velocity));
            let mut field = integrate_svf(&velocity, steps)?;
            field.strength_mm = strength;
            let record = WarpRecord {
                mode: WarpMode::Svf,
                strength_mm: strength,
                svf_steps: Some(steps),
            };
            Ok((field, record))
        }
    }
}

/// One zeroed slab at the edge of the field of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropCut {
    pub axis: usize,
    /// True when the slab sits at the high-index end of the axis.
    pub high_side: bool,
    pub proportion: f64,
    /// Number of zeroed slices, `round(proportion · extent)`.
    pub depth: usize,
}

/// Binary partial-field-of-view mask `m = m_1 ⊙ … ⊙ m_N`, stored as its
/// 1-D factors.
#[derive(Clone, Debug, PartialEq)]
pub struct CropMask {
    shape: Shape,
    factors: Vec<Vec<u8>>,
    cuts: Vec<CropCut>,
}

impl CropMask {
    pub fn full(shape: &Shape) -> Self {
        Self {
            shape: shape.clone(),
            factors: shape.extents().iter().map(|&e| vec![1; e]).collect(),
            cuts: Vec::new(),
        }
    }

    pub fn from_cuts(shape: &Shape, cuts: Vec<CropCut>) -> Result<Self> {
        let mut mask = Self::full(shape);
        for cut in &cuts {
            if cut.axis >= shape.ndim() || cut.depth > shape.extent(cut.axis) {
                return Err(Error::Range(format!("crop {cut:?} does not fit {:?}", shape.extents())));
            }
            let e = shape.extent(cut.axis);
            let f = &mut mask.factors[cut.axis];
            let range = if cut.high_side { e - cut.depth..e } else { 0..cut.depth };
            f[range].iter_mut().for_each(|v| *v = 0);
        }
        mask.cuts = cuts;
        Ok(mask)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn factors(&self) -> &[Vec<u8>] {
        &self.factors
    }

    pub fn cuts(&self) -> &[CropCut] {
        &self.cuts
    }

    pub fn is_full(&self) -> bool {
        self.factors.iter().flatten().all(|&v| v == 1)
    }

    /// Mask value at a voxel.
    pub fn get(&self, idx: &[usize]) -> u8 {
        idx.iter().zip(&self.factors).map(|(&i, f)| f[i]).product()
    }

    /// Materialize the mask by broadcasting the factors.
    pub fn to_field(&self, grid: &Grid) -> Result<ScalarField> {
        check_grid(grid.shape(), &self.shape)?;
        let values = self.broadcast();
        ScalarField::new(grid.clone(), values.into_iter().map(f32::from).collect())
    }

    pub(crate) fn broadcast(&self) -> Vec<u8> {
        let shape = &self.shape;
        let last = shape.ndim() - 1;
        let row = shape.extent(last);
        let mut out = vec![0u8; shape.len()];
        out.par_chunks_mut(row).enumerate().for_each(|(r, chunk)| {
            let mut lead = 1u8;
            let mut rem = r;
            for a in (0..last).rev() {
                let e = shape.extent(a);
                lead *= self.factors[a][rem % e];
                rem /= e;
            }
            for (o, &f) in chunk.iter_mut().zip(&self.factors[last]) {
                *o = lead * f;
            }
        });
        out
    }
}

/// Zero a proportion `p_m ~ U(a_m, b_m)` of the outermost slices on one
/// random side of one random axis, or of every axis independently when
/// `every_axis` is set.
pub fn sample_crop_mask(shape: &Shape, bounds: (f64, f64), every_axis: bool, rng: RngStream) -> Result<CropMask> {
    let (a, b) = bounds;
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(Error::Range(format!("crop proportion [{a}, {b}] must satisfy 0 ≤ a ≤ b ≤ 1")));
    }
    let mut d = rng.draws();
    let cut_for = |axis: usize, p: f64, high: bool| CropCut {
        axis,
        high_side: high,
        proportion: p,
        depth: ((p * shape.extent(axis) as f64).round() as usize).min(shape.extent(axis)),
    };
    let cuts = if every_axis {
        (0..shape.ndim())
            .map(|axis| {
                let p = d.uniform(a, b);
                let high = d.bernoulli(0.5);
                cut_for(axis, p, high)
            })
            .collect()
    } else {
        let p = d.uniform(a, b);
        let axis = d.index(shape.ndim());
        let high = d.bernoulli(0.5);
        vec![cut_for(axis, p, high)]
    };
    CropMask::from_cuts(shape, cuts)
}
