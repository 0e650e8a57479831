//! The generative model `(x, s_x) = g(s, z)`.
//!
//! Each stage draws from its own sub-stream of the seed, addressed by a fixed
//! id, so switching one stage on or off never changes what another stage
//! draws. Stage gates are drawn together up front for the same reason.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LabelOutput, SynthesisConfig};
use crate::corrupt::{
    add_noise, apply_bias, apply_blur, apply_gamma, apply_mask, clear_slices, downsample_upsample,
    simulate_skullstrip, BiasRecord, BlurRecord, ClearRecord, DownsampleRecord, GammaRecord, NoiseRecord,
};
use crate::error::{Error, Result};
use crate::fields::{Grid, LabelVolume, ScalarField};
use crate::rng::RngStream;
use crate::spatial::{
    compose, sample_affine, sample_crop_mask, sample_warp, warp_labels, AffineParams, CropCut, CropMask,
    WarpRecord,
};
use crate::synthesis::{render_mean_image, sample_lut_in, IntensityLut};

/// Default size of a preview batch.
pub const DEFAULT_PREVIEW_COUNT: usize = 25;

mod stream_id {
    pub const AFFINE: u64 = 1;
    pub const WARP: u64 = 2;
    pub const CROP: u64 = 3;
    pub const LUT: u64 = 4;
    pub const BIAS: u64 = 5;
    pub const BLUR: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const GAMMA: u64 = 8;
    pub const DOWNSAMPLE: u64 = 9;
    pub const CLEAR: u64 = 10;
    pub const GATES: u64 = 12;
}

/// Points in the chain at which generation can stop, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Spatial,
    MeanImage,
    Bias,
    Blur,
    Noise,
    Gamma,
    Downsample,
    Mask,
    ClearSlices,
    Skullstrip,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Spatial,
        Stage::MeanImage,
        Stage::Bias,
        Stage::Blur,
        Stage::Noise,
        Stage::Gamma,
        Stage::Downsample,
        Stage::Mask,
        Stage::ClearSlices,
        Stage::Skullstrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Spatial => "spatial",
            Stage::MeanImage => "mean-image",
            Stage::Bias => "bias",
            Stage::Blur => "blur",
            Stage::Noise => "noise",
            Stage::Gamma => "gamma",
            Stage::Downsample => "downsample",
            Stage::Mask => "mask",
            Stage::ClearSlices => "clear-slices",
            Stage::Skullstrip => "skullstrip",
        }
    }

    pub fn last() -> Stage {
        Stage::Skullstrip
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::Config(crate::error::ConfigError::single(
                    "stage",
                    format!("unknown stage `{s}`; expected one of {}", names.join(", ")),
                ))
            })
    }
}

/// Outcome of the per-sample coin flips for optional stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gates {
    pub bias: bool,
    pub blur: bool,
    pub noise: bool,
    pub gamma: bool,
    pub downsample: bool,
    pub crop: bool,
    pub clear_slices: bool,
    pub skullstrip: bool,
}

impl Gates {
    fn draw(cfg: &SynthesisConfig, rng: RngStream) -> Self {
        let p = &cfg.probability;
        let mut d = rng.draws();
        let mut flip = |p: f64| d.bernoulli(p);
        Gates {
            bias: flip(p.bias),
            blur: flip(p.blur),
            noise: flip(p.noise),
            gamma: flip(p.gamma),
            downsample: flip(p.downsample),
            crop: flip(p.crop),
            clear_slices: flip(p.clear_slices),
            skullstrip: flip(p.skullstrip) && cfg.corruption.brain_labels.is_some(),
        }
    }
}

/// Everything needed to regenerate a sample, plus every value drawn. Stage
/// records are absent when the stage was gated off or lies past the cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_map: Option<String>,
    pub cutoff: Stage,
    pub config: SynthesisConfig,
    pub gates: Gates,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warp: Option<WarpRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<Vec<CropCut>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lut: Option<IntensityLut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blur: Option<BlurRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downsample: Option<DownsampleRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clear_slices: Option<ClearRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skullstrip: Option<Vec<u32>>,
}

impl Provenance {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("provenance: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: ScalarField,
    pub labels: LabelVolume,
    pub seed: u64,
    pub provenance: Provenance,
}

impl SamplePair {
    /// Hash of the image bits; equal images hash equally within a build.
    pub fn image_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.image.shape().extents().hash(&mut h);
        for v in self.image.values() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn label_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.labels.shape().extents().hash(&mut h);
        self.labels.labels().hash(&mut h);
        h.finish()
    }
}

/// Options beyond `(s, cfg, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    /// Last stage to run.
    pub cutoff: Stage,
    /// Identifier of the input label map, recorded in the provenance.
    pub label_map: Option<String>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            cutoff: Stage::last(),
            label_map: None,
        }
    }
}

/// Run the full chain.
pub fn generate(s: &LabelVolume, cfg: &SynthesisConfig, seed: u64) -> Result<SamplePair> {
    generate_with(s, cfg, seed, &GenerateOptions::default())
}

/// Run the chain up to and including `cutoff`.
pub fn generate_until(s: &LabelVolume, cfg: &SynthesisConfig, seed: u64, cutoff: Stage) -> Result<SamplePair> {
    generate_with(
        s,
        cfg,
        seed,
        &GenerateOptions {
            cutoff,
            label_map: None,
        },
    )
}

/// Rebuild a sample from its recorded provenance.
pub fn regenerate(s: &LabelVolume, provenance: &Provenance) -> Result<SamplePair> {
    let opts = GenerateOptions {
        cutoff: provenance.cutoff,
        label_map: provenance.label_map.clone(),
    };
    generate_with(s, &provenance.config, provenance.seed, &opts)
}

fn in_stage<T>(stage: Stage, prov: &Provenance, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.name(),
        provenance: prov.to_json(),
        source: Box::new(e),
    })
}

fn input_grid(s: &LabelVolume, cfg: &SynthesisConfig) -> Result<Grid> {
    if let Some(n) = cfg.ndim {
        if n != s.grid().ndim() {
            return Err(Error::ShapeMismatch(format!(
                "configuration expects {n}-D label maps, got {}-D",
                s.grid().ndim()
            )));
        }
    }
    match &cfg.voxel_size_mm {
        Some(v) => Grid::new(s.shape().clone(), v),
        None => Ok(s.grid().clone()),
    }
}

fn crop_labels(labels: &LabelVolume, mask: &CropMask) -> LabelVolume {
    if mask.is_full() {
        return labels.clone();
    }
    let m = mask.broadcast();
    let out = labels
        .labels()
        .par_iter()
        .zip(m.par_iter())
        .map(|(&l, &k)| if k == 0 { 0 } else { l })
        .collect();
    labels.with_labels(out)
}

pub fn generate_with(s: &LabelVolume, cfg: &SynthesisConfig, seed: u64, opts: &GenerateOptions) -> Result<SamplePair> {
    cfg.validate()?;
    let grid = input_grid(s, cfg)?;
    let s = LabelVolume::with_grid(grid.clone(), s.labels().to_vec(), s.label_count());
    let root = RngStream::new(seed, 0);
    let gates = Gates::draw(cfg, root.split(stream_id::GATES));
    let mut prov = Provenance {
        generator: concat!("labelsynth ", env!("CARGO_PKG_VERSION")).to_string(),
        seed,
        label_map: opts.label_map.clone(),
        cutoff: opts.cutoff,
        config: cfg.clone(),
        gates: gates.clone(),
        affine: None,
        warp: None,
        crop: None,
        lut: None,
        bias: None,
        blur: None,
        noise: None,
        gamma: None,
        downsample: None,
        clear_slices: None,
        skullstrip: None,
    };
    let cutoff = opts.cutoff;

    // Spatial: Φ = φ ∘ A, then the partial field-of-view mask.
    let affine = in_stage(
        Stage::Spatial,
        &prov,
        sample_affine(grid.ndim(), &cfg.affine_ranges(), root.split(stream_id::AFFINE)),
    )?;
    prov.affine = Some(affine.params().clone());
    let (phi, warp_record) = in_stage(
        Stage::Spatial,
        &prov,
        sample_warp(&grid, &cfg.warp_settings(), root.split(stream_id::WARP)),
    )?;
    prov.warp = Some(warp_record);
    let identity = *affine.matrix() == crate::spatial::Homogeneous::identity(grid.ndim()) && phi.is_zero();
    let mut labels = if identity {
        s.clone()
    } else {
        let total = in_stage(Stage::Spatial, &prov, compose(&phi, &affine))?;
        drop(phi);
        in_stage(Stage::Spatial, &prov, warp_labels(&s, &total))?
    };
    let mask = if gates.crop {
        in_stage(
            Stage::Spatial,
            &prov,
            sample_crop_mask(
                grid.shape(),
                cfg.crop_bounds(),
                cfg.spatial.crop_every_axis,
                root.split(stream_id::CROP),
            ),
        )?
    } else {
        CropMask::full(grid.shape())
    };
    prov.crop = gates.crop.then(|| mask.cuts().to_vec());

    let finish = |image: ScalarField, labels: LabelVolume, prov: Provenance| SamplePair {
        image,
        labels,
        seed,
        provenance: prov,
    };

    if cutoff == Stage::Spatial {
        // Labels only; the image slot holds the label map as intensities.
        let image = ScalarField::new(grid.clone(), labels.labels().iter().map(|&l| l as f32).collect())?;
        return Ok(finish(image, labels, prov));
    }

    let lut = in_stage(
        Stage::MeanImage,
        &prov,
        sample_lut_in(
            labels.label_count(),
            cfg.intensity.label_mean.tuple(),
            root.split(stream_id::LUT),
            &cfg.intensity.lut,
        ),
    )?;
    prov.lut = Some(lut.clone());
    let mut x = in_stage(Stage::MeanImage, &prov, render_mean_image(&labels, &lut))?;
    if cutoff == Stage::MeanImage {
        return Ok(finish(x, labels, prov));
    }

    if gates.bias {
        let (y, rec) = in_stage(
            Stage::Bias,
            &prov,
            apply_bias(&x, &cfg.bias_settings(), root.split(stream_id::BIAS)),
        )?;
        x = y;
        prov.bias = Some(rec);
    }
    if cutoff == Stage::Bias {
        return Ok(finish(x, labels, prov));
    }

    if gates.blur {
        let (y, rec) = in_stage(
            Stage::Blur,
            &prov,
            apply_blur(&x, &cfg.blur_settings(), root.split(stream_id::BLUR)),
        )?;
        x = y;
        prov.blur = Some(rec);
    }
    if cutoff == Stage::Blur {
        return Ok(finish(x, labels, prov));
    }

    if gates.noise {
        let (y, rec) = in_stage(
            Stage::Noise,
            &prov,
            add_noise(&x, &cfg.noise_settings(), root.split(stream_id::NOISE)),
        )?;
        x = y;
        prov.noise = Some(rec);
    }
    if cutoff == Stage::Noise {
        return Ok(finish(x, labels, prov));
    }

    if gates.gamma {
        let (y, rec) = in_stage(
            Stage::Gamma,
            &prov,
            apply_gamma(&x, &cfg.gamma_settings(), root.split(stream_id::GAMMA)),
        )?;
        x = y;
        prov.gamma = Some(rec);
    }
    if cutoff == Stage::Gamma {
        return Ok(finish(x, labels, prov));
    }

    if gates.downsample {
        let (y, l, rec) = in_stage(
            Stage::Downsample,
            &prov,
            downsample_upsample(&x, &labels, &cfg.downsample_settings(), root.split(stream_id::DOWNSAMPLE)),
        )?;
        x = y;
        labels = l;
        prov.downsample = Some(rec);
    }
    if cutoff == Stage::Downsample {
        return Ok(finish(x, labels, prov));
    }

    x = in_stage(Stage::Mask, &prov, apply_mask(&x, &mask))?;
    let output_labels = |labels: &LabelVolume| match cfg.output.label_output {
        LabelOutput::Cropped => crop_labels(labels, &mask),
        LabelOutput::Full => labels.clone(),
    };
    if cutoff == Stage::Mask {
        let out = output_labels(&labels);
        return Ok(finish(x, out, prov));
    }

    if gates.clear_slices {
        let (y, rec) = in_stage(
            Stage::ClearSlices,
            &prov,
            clear_slices(&x, &cfg.clear_settings(), root.split(stream_id::CLEAR)),
        )?;
        x = y;
        prov.clear_slices = Some(rec);
    }
    if cutoff == Stage::ClearSlices {
        let out = output_labels(&labels);
        return Ok(finish(x, out, prov));
    }

    if gates.skullstrip {
        let brain = cfg.corruption.brain_labels.clone().unwrap_or_default();
        x = in_stage(Stage::Skullstrip, &prov, simulate_skullstrip(&x, &labels, &brain))?;
        prov.skullstrip = Some(brain);
    }
    let out = output_labels(&labels);
    Ok(finish(x, out, prov))
}

/// A sample that could not be generated.
#[derive(Debug)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: Error,
}

impl fmt::Display for SeedFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed {}: {}", self.seed, self.error)
    }
}

impl std::error::Error for SeedFailure {}

/// `n` samples from seeds `base_seed..base_seed + n`, ordered by seed. A
/// failing seed is reported in place without aborting the batch.
pub fn preview_batch(
    s: &LabelVolume,
    cfg: &SynthesisConfig,
    n: usize,
    base_seed: u64,
) -> Result<Vec<std::result::Result<SamplePair, SeedFailure>>> {
    if n == 0 {
        return Err(Error::Range("a preview batch needs at least one sample".into()));
    }
    cfg.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            generate(s, cfg, seed).map_err(|error| SeedFailure { seed, error })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QcFlag {
    /// Every image voxel is zero.
    EmptyImage,
    /// The image holds NaN or infinite values.
    NonFinite,
    /// No foreground label remains in the field of view.
    LabelsOutOfFov,
    /// Some foreground remains, but less than the threshold fraction.
    LowForeground,
    /// Foreground touches many faces of the field of view.
    AnatomyTouchingFaces,
}

impl QcFlag {
    pub fn name(self) -> &'static str {
        match self {
            QcFlag::EmptyImage => "empty-image",
            QcFlag::NonFinite => "non-finite",
            QcFlag::LabelsOutOfFov => "labels-out-of-fov",
            QcFlag::LowForeground => "low-foreground",
            QcFlag::AnatomyTouchingFaces => "anatomy-touching-faces",
        }
    }
}

impl fmt::Display for QcFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QcThresholds {
    /// Minimum fraction of non-background label voxels.
    pub min_foreground: f64,
    /// Number of touched faces at which anatomy counts as cut off.
    pub max_touching_faces: usize,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            min_foreground: 0.01,
            max_touching_faces: 3,
        }
    }
}

pub fn qc_flags(pair: &SamplePair) -> Vec<QcFlag> {
    qc_flags_with(pair, &QcThresholds::default())
}

pub fn qc_flags_with(pair: &SamplePair, t: &QcThresholds) -> Vec<QcFlag> {
    let mut flags = Vec::new();
    let x = pair.image.values();
    if !pair.image.is_finite() {
        flags.push(QcFlag::NonFinite);
    }
    if x.par_iter().all(|&v| v == 0.0) {
        flags.push(QcFlag::EmptyImage);
    }
    let labels = pair.labels.labels();
    let fg = labels.par_iter().filter(|&&l| l != 0).count();
    if fg == 0 {
        flags.push(QcFlag::LabelsOutOfFov);
    } else if (fg as f64) < t.min_foreground * labels.len() as f64 {
        flags.push(QcFlag::LowForeground);
    }
    if fg > 0 && touching_faces(&pair.labels) >= t.max_touching_faces {
        flags.push(QcFlag::AnatomyTouchingFaces);
    }
    flags
}

/// Number of the `2N` faces of the field of view that hold foreground.
pub fn touching_faces(labels: &LabelVolume) -> usize {
    let shape = labels.shape();
    let mut touched = vec![[false; 2]; shape.ndim()];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let idx = shape.unravel(i);
        for (a, &k) in idx.iter().enumerate() {
            if k == 0 {
                touched[a][0] = true;
            }
            if k + 1 == shape.extent(a) {
                touched[a][1] = true;
            }
        }
    }
    touched.iter().flatten().filter(|&&t| t).count()
}

/// Per-stage gate outcomes as a name map, for display.
pub fn gate_map(g: &Gates) -> BTreeMap<&'static str, bool> {
    BTreeMap::from([
        ("bias", g.bias),
        ("blur", g.blur),
        ("noise", g.noise),
        ("gamma", g.gamma),
        ("downsample", g.downsample),
        ("crop", g.crop),
        ("clear-slices", g.clear_slices),
        ("skullstrip", g.skullstrip),
    ])
}
