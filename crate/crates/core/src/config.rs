//! Synthesis configuration: a versioned TOML document whose defaults are the
//! uniform starter ranges.
//!
//! Every sampling range is written as `[a, b]` under a key whose suffix names
//! its unit (`_mm`, `_deg`, `_pct`). Percentages are converted to fractions
//! when settings are handed to the algorithms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corrupt::{
    BiasSettings, BiasVariant, BlurSettings, ClearSettings, DownsampleSettings, GammaSettings,
    Interpolation, NoiseSettings,
};
use crate::error::{ConfigError, Error, FieldIssue, Result};
use crate::noise::{Fade, NoiseKind, NoiseSpec};
use crate::spatial::{AffineRanges, WarpMode, WarpSettings};
use crate::synthesis::LutConstraints;

pub const SCHEMA_VERSION: u32 = 1;

/// Closed real interval `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

/// Closed integer interval `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange(pub u32, pub u32);

impl Range {
    pub fn tuple(self) -> (f64, f64) {
        (self.0, self.1)
    }

    fn percent(self) -> (f64, f64) {
        (self.0 / 100.0, self.1 / 100.0)
    }
}

impl IntRange {
    pub fn tuple(self) -> (u32, u32) {
        (self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Kernel standard deviation range for smoothed noise.
    pub smoothing_mm: Range,
    /// Octave count for fractal noise.
    pub octaves: u32,
    pub fade: Fade,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Perlin,
            smoothing_mm: Range(0.0, 0.0),
            octaves: 1,
            fade: Fade::Linear,
        }
    }
}

impl NoiseConfig {
    fn spec(&self, grid: IntRange) -> NoiseSpec {
        NoiseSpec {
            kind: self.kind,
            grid: grid.tuple(),
            smoothing_mm: self.smoothing_mm.tuple(),
            amplitude: (1.0, 1.0),
            octaves: self.octaves,
            fade: self.fade,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub translation_mm: Range,
    pub rotation_deg: Range,
    pub scaling_pct: Range,
    pub shear_pct: Range,
    pub warp_strength_mm: Range,
    pub warp_control_points: IntRange,
    pub warp_mode: WarpMode,
    pub svf_steps: u32,
    pub warp_noise: NoiseConfig,
    pub cropping_pct: Range,
    /// Crop every axis independently instead of one random axis.
    pub crop_every_axis: bool,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            translation_mm: Range(-30.0, 30.0),
            rotation_deg: Range(-30.0, 30.0),
            scaling_pct: Range(90.0, 110.0),
            shear_pct: Range(90.0, 110.0),
            warp_strength_mm: Range(0.0, 20.0),
            warp_control_points: IntRange(2, 16),
            warp_mode: WarpMode::Svf,
            svf_steps: 7,
            warp_noise: NoiseConfig::default(),
            cropping_pct: Range(0.0, 20.0),
            crop_every_axis: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityConfig {
    pub label_mean: Range,
    pub lut: LutConstraints,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            label_mean: Range(0.0, 1.0),
            lut: LutConstraints::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub bias_variant: BiasVariant,
    pub bias_drop_pct: Range,
    pub bias_control_points: IntRange,
    pub bias_noise: NoiseConfig,
    /// Standard deviation of the log field for the exponential variant.
    pub bias_exp_sd: f64,
    pub blur_sd_mm: Range,
    pub noise_sd_pct: Range,
    pub gamma: Range,
    pub downsample_factor: Range,
    pub downsample_interp: Interpolation,
    pub downsample_labels: bool,
    pub clear_slice_count: IntRange,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clear_slice_axis: Option<usize>,
    /// Labels kept by skull-strip simulation; the stage is inactive when
    /// unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brain_labels: Option<Vec<u32>>,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            bias_variant: BiasVariant::NormalizedDrop,
            bias_drop_pct: Range(0.0, 50.0),
            bias_control_points: IntRange(2, 4),
            bias_noise: NoiseConfig::default(),
            bias_exp_sd: 0.33,
            blur_sd_mm: Range(0.0, 2.0),
            noise_sd_pct: Range(0.0, 10.0),
            gamma: Range(0.5, 1.5),
            downsample_factor: Range(1.0, 4.0),
            downsample_interp: Interpolation::Linear,
            downsample_labels: false,
            clear_slice_count: IntRange(1, 3),
            clear_slice_axis: None,
            brain_labels: None,
        }
    }
}

/// Probability that each optional stage runs for a given sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageProbabilities {
    pub bias: f64,
    pub blur: f64,
    pub noise: f64,
    pub gamma: f64,
    pub downsample: f64,
    pub crop: f64,
    pub clear_slices: f64,
    pub skullstrip: f64,
}

impl Default for StageProbabilities {
    fn default() -> Self {
        Self {
            bias: 1.0,
            blur: 0.5,
            noise: 1.0,
            gamma: 1.0,
            downsample: 0.5,
            crop: 0.5,
            clear_slices: 0.5,
            skullstrip: 0.5,
        }
    }
}

impl StageProbabilities {
    /// Every stage always on.
    pub fn always() -> Self {
        Self {
            bias: 1.0,
            blur: 1.0,
            noise: 1.0,
            gamma: 1.0,
            downsample: 1.0,
            crop: 1.0,
            clear_slices: 1.0,
            skullstrip: 1.0,
        }
    }

    /// Every stage off.
    pub fn never() -> Self {
        Self {
            bias: 0.0,
            blur: 0.0,
            noise: 0.0,
            gamma: 0.0,
            downsample: 0.0,
            crop: 0.0,
            clear_slices: 0.0,
            skullstrip: 0.0,
        }
    }
}

/// Which label map accompanies the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelOutput {
    /// `s_x ⊙ m`: labels outside the cropped field of view become 0.
    #[default]
    Cropped,
    /// `s_x`: the full warped label map.
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub label_output: LabelOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub schema_version: u32,
    /// Expected dimensionality of input label maps; any is accepted when
    /// unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndim: Option<usize>,
    /// Voxel size override for inputs without a header.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voxel_size_mm: Option<Vec<f64>>,
    pub spatial: SpatialConfig,
    pub intensity: IntensityConfig,
    pub corruption: CorruptionConfig,
    pub probability: StageProbabilities,
    pub output: OutputConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ndim: None,
            voxel_size_mm: None,
            spatial: SpatialConfig::default(),
            intensity: IntensityConfig::default(),
            corruption: CorruptionConfig::default(),
            probability: StageProbabilities::default(),
            output: OutputConfig::default(),
        }
    }
}

/// The fourteen starter ranges by their display name, in table order.
pub fn table_ranges(cfg: &SynthesisConfig) -> Vec<(&'static str, f64, f64)> {
    let s = &cfg.spatial;
    let c = &cfg.corruption;
    let i = |r: IntRange| (r.0 as f64, r.1 as f64);
    vec![
        ("translation_mm", s.translation_mm.0, s.translation_mm.1),
        ("rotation_deg", s.rotation_deg.0, s.rotation_deg.1),
        ("scaling_pct", s.scaling_pct.0, s.scaling_pct.1),
        ("shear_pct", s.shear_pct.0, s.shear_pct.1),
        ("warp_strength_mm", s.warp_strength_mm.0, s.warp_strength_mm.1),
        ("warp_control_points", i(s.warp_control_points).0, i(s.warp_control_points).1),
        ("cropping_pct", s.cropping_pct.0, s.cropping_pct.1),
        ("label_mean", cfg.intensity.label_mean.0, cfg.intensity.label_mean.1),
        ("bias_drop_pct", c.bias_drop_pct.0, c.bias_drop_pct.1),
        ("bias_control_points", i(c.bias_control_points).0, i(c.bias_control_points).1),
        ("blur_sd_mm", c.blur_sd_mm.0, c.blur_sd_mm.1),
        ("noise_sd_pct", c.noise_sd_pct.0, c.noise_sd_pct.1),
        ("gamma", c.gamma.0, c.gamma.1),
        ("downsample_factor", c.downsample_factor.0, c.downsample_factor.1),
    ]
}

impl SynthesisConfig {
    pub fn affine_ranges(&self) -> AffineRanges {
        let s = &self.spatial;
        AffineRanges {
            translation_mm: s.translation_mm.tuple(),
            rotation_deg: s.rotation_deg.tuple(),
            scaling: s.scaling_pct.percent(),
            shear: s.shear_pct.percent(),
        }
    }

    pub fn warp_settings(&self) -> WarpSettings {
        let s = &self.spatial;
        WarpSettings {
            strength_mm: s.warp_strength_mm.tuple(),
            noise: s.warp_noise.spec(s.warp_control_points),
            mode: s.warp_mode,
            svf_steps: s.svf_steps,
        }
    }

    pub fn crop_bounds(&self) -> (f64, f64) {
        self.spatial.cropping_pct.percent()
    }

    pub fn bias_settings(&self) -> BiasSettings {
        let c = &self.corruption;
        BiasSettings {
            variant: c.bias_variant,
            drop: c.bias_drop_pct.percent(),
            noise: c.bias_noise.spec(c.bias_control_points),
            exp_sd: c.bias_exp_sd,
        }
    }

    pub fn blur_settings(&self) -> BlurSettings {
        BlurSettings {
            sd_mm: self.corruption.blur_sd_mm.tuple(),
        }
    }

    pub fn noise_settings(&self) -> NoiseSettings {
        NoiseSettings {
            sd: self.corruption.noise_sd_pct.percent(),
        }
    }

    pub fn gamma_settings(&self) -> GammaSettings {
        GammaSettings {
            gamma: self.corruption.gamma.tuple(),
        }
    }

    pub fn downsample_settings(&self) -> DownsampleSettings {
        let c = &self.corruption;
        DownsampleSettings {
            factor: c.downsample_factor.tuple(),
            interpolation: c.downsample_interp,
            labels: c.downsample_labels,
        }
    }

    pub fn clear_settings(&self) -> ClearSettings {
        ClearSettings {
            count: self.corruption.clear_slice_count.tuple(),
            axis: self.corruption.clear_slice_axis,
        }
    }

    /// Check every field, collecting all issues.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let mut issues = Vec::new();
        let range = |issues: &mut Vec<FieldIssue>, field: &str, r: Range, lo: Option<f64>, hi: Option<f64>| {
            if !(r.0.is_finite() && r.1.is_finite()) {
                issues.push(FieldIssue::new(field, format!("bounds [{}, {}] must be finite", r.0, r.1)));
            } else if r.0 > r.1 {
                issues.push(FieldIssue::new(field, format!("range [{}, {}] is not ordered (a ≤ b)", r.0, r.1)));
            } else if let Some(lo) = lo.filter(|&lo| r.0 < lo) {
                issues.push(FieldIssue::new(field, format!("lower bound {} is below the minimum {lo}", r.0)));
            } else if let Some(hi) = hi.filter(|&hi| r.1 > hi) {
                issues.push(FieldIssue::new(field, format!("upper bound {} exceeds the maximum {hi}", r.1)));
            }
        };
        let s = &self.spatial;
        let c = &self.corruption;
        range(&mut issues, "spatial.translation_mm", s.translation_mm, None, None);
        range(&mut issues, "spatial.rotation_deg", s.rotation_deg, None, None);
        range(&mut issues, "spatial.scaling_pct", s.scaling_pct, Some(f64::MIN_POSITIVE), None);
        range(&mut issues, "spatial.shear_pct", s.shear_pct, None, None);
        range(&mut issues, "spatial.warp_strength_mm", s.warp_strength_mm, Some(0.0), None);
        range(&mut issues, "spatial.warp_noise.smoothing_mm", s.warp_noise.smoothing_mm, Some(0.0), None);
        range(&mut issues, "spatial.cropping_pct", s.cropping_pct, Some(0.0), Some(100.0));
        range(&mut issues, "intensity.label_mean", self.intensity.label_mean, Some(0.0), Some(1.0));
        range(&mut issues, "corruption.bias_drop_pct", c.bias_drop_pct, Some(0.0), Some(100.0));
        range(&mut issues, "corruption.bias_noise.smoothing_mm", c.bias_noise.smoothing_mm, Some(0.0), None);
        range(&mut issues, "corruption.blur_sd_mm", c.blur_sd_mm, Some(0.0), None);
        range(&mut issues, "corruption.noise_sd_pct", c.noise_sd_pct, Some(0.0), None);
        range(&mut issues, "corruption.gamma", c.gamma, Some(f64::MIN_POSITIVE), None);
        range(&mut issues, "corruption.downsample_factor", c.downsample_factor, Some(1.0), None);

        let int_range = |issues: &mut Vec<FieldIssue>, field: &str, r: IntRange, min: u32| {
            if r.0 > r.1 {
                issues.push(FieldIssue::new(field, format!("range [{}, {}] is not ordered (a ≤ b)", r.0, r.1)));
            } else if r.0 < min {
                issues.push(FieldIssue::new(field, format!("lower bound {} is below the minimum {min}", r.0)));
            }
        };
        let min_points = |n: &NoiseConfig| match n.kind {
            NoiseKind::Perlin | NoiseKind::Fractal => 2,
            NoiseKind::Value | NoiseKind::Smoothed => 1,
        };
        int_range(&mut issues, "spatial.warp_control_points", s.warp_control_points, min_points(&s.warp_noise));
        int_range(&mut issues, "corruption.bias_control_points", c.bias_control_points, min_points(&c.bias_noise));
        int_range(&mut issues, "corruption.clear_slice_count", c.clear_slice_count, 0);

        let mut issue = |field: &str, message: String| issues.push(FieldIssue::new(field, message));
        if self.schema_version != SCHEMA_VERSION {
            issue(
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        if let Some(n) = self.ndim {
            if !(2..=3).contains(&n) {
                issue("ndim", format!("dimensionality must be 2 or 3, got {n}"));
            }
        }
        if let Some(v) = &self.voxel_size_mm {
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                issue("voxel_size_mm", "voxel sizes must be positive".into());
            }
            if let Some(n) = self.ndim.filter(|&n| n != v.len()) {
                issue("voxel_size_mm", format!("expected {n} entries, got {}", v.len()));
            }
        }
        if s.svf_steps < 1 {
            issue("spatial.svf_steps", "at least one integration step is required".into());
        }
        for (field, n) in [("spatial.warp_noise", &s.warp_noise), ("corruption.bias_noise", &c.bias_noise)] {
            if n.octaves < 1 {
                issue(&format!("{field}.octaves"), "octave count must be at least 1".into());
            }
        }
        if !(c.bias_exp_sd >= 0.0 && c.bias_exp_sd.is_finite()) {
            issue("corruption.bias_exp_sd", format!("{} must be a non-negative number", c.bias_exp_sd));
        }
        if let Some(a) = c.clear_slice_axis {
            if a > 2 {
                issue("corruption.clear_slice_axis", format!("axis {a} does not exist"));
            }
        }
        if let Some(b) = &c.brain_labels {
            if b.is_empty() {
                issue("corruption.brain_labels", "list must not be empty; omit it to disable skull stripping".into());
            }
        }
        let lut = &self.intensity.lut;
        if let Some(b) = lut.background {
            if !(0.0..=1.0).contains(&b) {
                issue("intensity.lut.background", format!("{b} is outside [0, 1]"));
            }
        }
        for (k, r) in lut.ranges.iter().enumerate() {
            let (lo, hi) = r.range;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                issue(&format!("intensity.lut.ranges[{k}]"), format!("[{lo}, {hi}] must be an ordered sub-range of [0, 1]"));
            }
        }
        let p = &self.probability;
        for (name, v) in [
            ("bias", p.bias),
            ("blur", p.blur),
            ("noise", p.noise),
            ("gamma", p.gamma),
            ("downsample", p.downsample),
            ("crop", p.crop),
            ("clear_slices", p.clear_slices),
            ("skullstrip", p.skullstrip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                issue(&format!("probability.{name}"), format!("{v} is not a probability"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }
}

const UNIT_SUFFIXES: [&str; 8] = ["_mm", "_deg", "_pct", "_rad", "_vox", "_frac", "_percent", "_degrees"];

fn strip_unit(key: &str) -> &str {
    UNIT_SUFFIXES
        .iter()
        .find_map(|s| key.strip_suffix(s))
        .unwrap_or(key)
}

fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => &[
            "schema_version",
            "ndim",
            "voxel_size_mm",
            "spatial",
            "intensity",
            "corruption",
            "probability",
            "output",
        ],
        "spatial" => &[
            "translation_mm",
            "rotation_deg",
            "scaling_pct",
            "shear_pct",
            "warp_strength_mm",
            "warp_control_points",
            "warp_mode",
            "svf_steps",
            "warp_noise",
            "cropping_pct",
            "crop_every_axis",
        ],
        "spatial.warp_noise" | "corruption.bias_noise" => &["kind", "smoothing_mm", "octaves", "fade"],
        "intensity" => &["label_mean", "lut"],
        "intensity.lut" => &["background", "ties", "ranges"],
        "corruption" => &[
            "bias_variant",
            "bias_drop_pct",
            "bias_control_points",
            "bias_noise",
            "bias_exp_sd",
            "blur_sd_mm",
            "noise_sd_pct",
            "gamma",
            "downsample_factor",
            "downsample_interp",
            "downsample_labels",
            "clear_slice_count",
            "clear_slice_axis",
            "brain_labels",
        ],
        "probability" => &[
            "bias",
            "blur",
            "noise",
            "gamma",
            "downsample",
            "crop",
            "clear_slices",
            "skullstrip",
        ],
        "output" => &["label_output"],
        _ => return None,
    })
}

/// Report unknown keys, distinguishing a wrong unit suffix from a plain typo.
fn check_keys(table: &toml::Table, path: &str, issues: &mut Vec<FieldIssue>) {
    let Some(known) = known_keys(path) else { return };
    for (key, value) in table {
        let dotted = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        if known.contains(&key.as_str()) {
            if let toml::Value::Table(t) = value {
                check_keys(t, &dotted, issues);
            }
            continue;
        }
        let base = strip_unit(key);
        let message = match known.iter().find(|k| strip_unit(k) == base && **k != base) {
            Some(expected) => format!("wrong unit suffix; this field is `{expected}`"),
            None => {
                let mut msg = "unknown key".to_string();
                if let Some(k) = known.iter().find(|k| strip_unit(k) == base) {
                    msg = format!("unknown key; did you mean `{k}`?");
                }
                msg
            }
        };
        issues.push(FieldIssue::new(dotted, message));
    }
}

/// Parse and validate a configuration document. Omitted fields take their
/// defaults; an empty document is the default configuration.
pub fn parse_config(text: &str) -> std::result::Result<SynthesisConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::single("", e.message().to_string()))?;
    let mut issues = Vec::new();
    check_keys(&table, "", &mut issues);
    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }
    let cfg: SynthesisConfig = table.try_into().map_err(|e: toml::de::Error| {
        ConfigError::single("", e.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text form; `serialize_config(parse_config(t)?)` is a fixed point.
pub fn serialize_config(cfg: &SynthesisConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable")
}

/// Overlay a partial document (JSON object) onto `base`, then validate.
pub fn merge_overrides(base: &SynthesisConfig, overrides: &serde_json::Value) -> std::result::Result<SynthesisConfig, ConfigError> {
    let mut merged = serde_json::to_value(base).expect("configuration serializes");
    deep_merge(&mut merged, overrides);
    let text = serde_json::from_value::<toml::Table>(merged)
        .map_err(|e| ConfigError::single("", e.to_string()))
        .map(|t| toml::to_string(&t).expect("table serializes"))?;
    parse_config(&text)
}

fn deep_merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => deep_merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Stages accepted by [`max_effect_config`].
pub const EFFECT_STAGES: [&str; 15] = [
    "translation",
    "rotation",
    "scaling",
    "shear",
    "warp",
    "warp-control-points",
    "cropping",
    "label-intensity",
    "bias",
    "bias-control-points",
    "blur",
    "noise",
    "gamma",
    "downsampling",
    "clear-slices",
];

/// Collapse the named stage's range to `[b, b]` so every draw produces the
/// strongest effect, and make sure the stage runs.
pub fn max_effect_config(cfg: &SynthesisConfig, stage: &str) -> Result<SynthesisConfig> {
    let mut out = cfg.clone();
    let top = |r: &mut Range| *r = Range(r.1, r.1);
    let top_int = |r: &mut IntRange| *r = IntRange(r.1, r.1);
    let s = &mut out.spatial;
    let c = &mut out.corruption;
    let p = &mut out.probability;
    match stage {
        "translation" => top(&mut s.translation_mm),
        "rotation" => top(&mut s.rotation_deg),
        "scaling" => top(&mut s.scaling_pct),
        "shear" => top(&mut s.shear_pct),
        "warp" => top(&mut s.warp_strength_mm),
        "warp-control-points" => top_int(&mut s.warp_control_points),
        "cropping" => {
            top(&mut s.cropping_pct);
            p.crop = 1.0;
        }
        "label-intensity" => top(&mut out.intensity.label_mean),
        "bias" => {
            top(&mut c.bias_drop_pct);
            p.bias = 1.0;
        }
        "bias-control-points" => {
            top_int(&mut c.bias_control_points);
            p.bias = 1.0;
        }
        "blur" => {
            top(&mut c.blur_sd_mm);
            p.blur = 1.0;
        }
        "noise" => {
            top(&mut c.noise_sd_pct);
            p.noise = 1.0;
        }
        "gamma" => {
            top(&mut c.gamma);
            p.gamma = 1.0;
        }
        "downsampling" => {
            top(&mut c.downsample_factor);
            p.downsample = 1.0;
        }
        "clear-slices" => {
            top_int(&mut c.clear_slice_count);
            p.clear_slices = 1.0;
        }
        other => {
            return Err(Error::Config(ConfigError::single(
                "stage",
                format!("unknown stage `{other}`; expected one of {}", EFFECT_STAGES.join(", ")),
            )))
        }
    }
    Ok(out)
}

/// Slider metadata for interactive front ends: every range field with its
/// dotted path, unit, current bounds and the admissible limits.
///
/// Limits are fixed by the default ranges: the upper limit is twice the
/// default maximum (capped where validation caps it), the lower limit twice
/// the default minimum when that is negative and the validation floor
/// otherwise.
pub fn slider_schema(cfg: &SynthesisConfig) -> BTreeMap<String, serde_json::Value> {
    let d = SynthesisConfig::default();
    let limits = |def: (f64, f64), floor: f64, cap: Option<f64>| {
        let min = if def.0 < 0.0 { 2.0 * def.0 } else { floor };
        let max = cap.map_or(2.0 * def.1, |c| c.min(2.0 * def.1));
        (min, max)
    };
    let r = |v: Range, def: Range, unit: &str, floor: f64, cap: Option<f64>, stage: &str| {
        let (min, max) = limits(def.tuple(), floor, cap);
        serde_json::json!({ "value": [v.0, v.1], "unit": unit, "min": min, "max": max, "stage": stage })
    };
    let ri = |v: IntRange, def: IntRange, floor: f64, stage: &str| {
        let (min, max) = limits((def.0 as f64, def.1 as f64), floor, None);
        serde_json::json!({ "value": [v.0, v.1], "unit": "count", "min": min, "max": max, "integer": true, "stage": stage })
    };
    let exclusive = |mut v: serde_json::Value| {
        v["exclusive_min"] = true.into();
        v
    };
    let (s, ds) = (&cfg.spatial, &d.spatial);
    let (c, dc) = (&cfg.corruption, &d.corruption);
    BTreeMap::from([
        ("spatial.translation_mm".into(), r(s.translation_mm, ds.translation_mm, "mm", 0.0, None, "translation")),
        ("spatial.rotation_deg".into(), r(s.rotation_deg, ds.rotation_deg, "deg", 0.0, None, "rotation")),
        ("spatial.scaling_pct".into(), exclusive(r(s.scaling_pct, ds.scaling_pct, "%", 0.0, None, "scaling"))),
        ("spatial.shear_pct".into(), r(s.shear_pct, ds.shear_pct, "%", 0.0, None, "shear")),
        ("spatial.warp_strength_mm".into(), r(s.warp_strength_mm, ds.warp_strength_mm, "mm", 0.0, None, "warp")),
        (
            "spatial.warp_control_points".into(),
            ri(s.warp_control_points, ds.warp_control_points, 2.0, "warp-control-points"),
        ),
        ("spatial.cropping_pct".into(), r(s.cropping_pct, ds.cropping_pct, "%", 0.0, Some(100.0), "cropping")),
        (
            "intensity.label_mean".into(),
            r(cfg.intensity.label_mean, d.intensity.label_mean, "a.u.", 0.0, Some(1.0), "label-intensity"),
        ),
        ("corruption.bias_drop_pct".into(), r(c.bias_drop_pct, dc.bias_drop_pct, "%", 0.0, Some(100.0), "bias")),
        (
            "corruption.bias_control_points".into(),
            ri(c.bias_control_points, dc.bias_control_points, 2.0, "bias-control-points"),
        ),
        ("corruption.blur_sd_mm".into(), r(c.blur_sd_mm, dc.blur_sd_mm, "mm", 0.0, None, "blur")),
        ("corruption.noise_sd_pct".into(), r(c.noise_sd_pct, dc.noise_sd_pct, "%", 0.0, None, "noise")),
        ("corruption.gamma".into(), exclusive(r(c.gamma, dc.gamma, "a.u.", 0.0, None, "gamma"))),
        (
            "corruption.downsample_factor".into(),
            r(c.downsample_factor, dc.downsample_factor, "factor", 1.0, None, "downsampling"),
        ),
        (
            "corruption.clear_slice_count".into(),
            ri(c.clear_slice_count, dc.clear_slice_count, 0.0, "clear-slices"),
        ),
    ])
}
