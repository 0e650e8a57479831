//! Volume, slice and configuration input/output.
//!
//! Volumes are read from NIfTI-1 files (`.nii`, optionally gzip-compressed)
//! or from the small raw format in [`raw`]. The format is detected from the
//! file contents. Loaded data is reoriented so that the array axes follow
//! the right, anterior, superior world directions, and label maps are
//! re-indexed to contiguous ids with background kept at 0.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Grid, LabelVolume, ScalarField, Shape};

pub mod nifti;
pub mod png;
pub mod raw;

pub use crate::config::{parse_config, serialize_config};
pub use self::png::{export_slice, slice_png};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Labels,
    Image,
}

/// Where a canonical axis came from in the file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSource {
    pub axis: usize,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub extents: Vec<usize>,
    pub voxel_size: Vec<f64>,
    pub kind: DataKind,
    /// Voxel-to-world matrix (mm) of the canonical array.
    pub affine: [[f64; 4]; 4],
    /// For each canonical axis, the file axis it was read from.
    pub orientation: Vec<AxisSource>,
    /// Free-text metadata stored with the volume (generation provenance).
    pub provenance: Option<String>,
}

impl VolumeHeader {
    /// Header for an array already in canonical orientation, with the world
    /// origin at voxel 0.
    pub fn for_grid(grid: &Grid, kind: DataKind) -> Self {
        let mut affine = [[0.0; 4]; 4];
        affine[3][3] = 1.0;
        for r in 0..3 {
            affine[r][r] = grid.voxel_size().get(r).copied().unwrap_or(1.0);
        }
        Self {
            extents: grid.shape().extents().to_vec(),
            voxel_size: grid.voxel_size().to_vec(),
            kind,
            affine,
            orientation: (0..grid.ndim())
                .map(|axis| AxisSource { axis, flipped: false })
                .collect(),
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, text: impl Into<String>) -> Self {
        self.provenance = Some(text.into());
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(Shape::new(&self.extents)?, &self.voxel_size)
    }
}

/// A label map with contiguous ids; `mapping[new] = original`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedLabels {
    pub volume: LabelVolume,
    pub mapping: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Image(ScalarField),
    Labels(LoadedLabels),
}

#[derive(Clone, Copy, Debug)]
pub enum VolumeData<'a> {
    Image(&'a ScalarField),
    Labels(&'a LabelVolume),
}

impl VolumeData<'_> {
    pub fn grid(&self) -> &Grid {
        match self {
            VolumeData::Image(f) => f.grid(),
            VolumeData::Labels(l) => l.grid(),
        }
    }

    pub fn kind(&self) -> DataKind {
        match self {
            VolumeData::Image(_) => DataKind::Image,
            VolumeData::Labels(_) => DataKind::Labels,
        }
    }
}

/// Decoded array in canonical orientation before it is typed.
pub(crate) struct RawArray {
    pub grid: Grid,
    /// Row-major, last axis fastest.
    pub values: Vec<f64>,
    pub integer: bool,
    pub declared: Option<DataKind>,
    pub header: VolumeHeader,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: gzip: {e}", path.display())))?;
        return Ok(out);
    }
    Ok(bytes)
}

fn decode(path: &Path) -> Result<RawArray> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(raw::MAGIC) {
        raw::decode(&bytes)
    } else {
        nifti::decode(&bytes)
    }
    .map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Re-index arbitrary non-negative integer labels to `0..J`, keeping 0 as
/// background.
pub fn reindex_labels(values: &[f64]) -> Result<(Vec<u32>, Vec<u64>)> {
    let mut ids = BTreeSet::new();
    for &v in values {
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0) {
            return Err(Error::Format(format!("label data must be non-negative integers, found {v}")));
        }
        ids.insert(v as u64);
    }
    ids.insert(0);
    let mapping: Vec<u64> = ids.into_iter().collect();
    let labels = values
        .iter()
        .map(|&v| mapping.binary_search(&(v as u64)).expect("id collected above") as u32)
        .collect();
    Ok((labels, mapping))
}

fn into_labels(a: RawArray) -> Result<(LoadedLabels, VolumeHeader)> {
    let (labels, mapping) = reindex_labels(&a.values)?;
    let count = (mapping.len() as u32).max(2);
    let volume = LabelVolume::new(a.grid, labels, count)?;
    let mut header = a.header;
    header.kind = DataKind::Labels;
    Ok((LoadedLabels { volume, mapping }, header))
}

fn into_image(a: RawArray) -> Result<(ScalarField, VolumeHeader)> {
    let values = a.values.into_iter().map(|v| v as f32).collect();
    let mut header = a.header;
    header.kind = DataKind::Image;
    Ok((ScalarField::new(a.grid, values)?, header))
}

/// Load a volume, typed by what the file declares (label intent or integer
/// raw data) and otherwise as an image.
pub fn load_volume(path: impl AsRef<Path>) -> Result<(Volume, VolumeHeader)> {
    let a = decode(path.as_ref())?;
    if a.declared == Some(DataKind::Labels) {
        let (l, h) = into_labels(a)?;
        Ok((Volume::Labels(l), h))
    } else {
        let (f, h) = into_image(a)?;
        Ok((Volume::Image(f), h))
    }
}

/// Load a label map; the data must hold non-negative integers.
pub fn load_labels(path: impl AsRef<Path>) -> Result<(LoadedLabels, VolumeHeader)> {
    let path = path.as_ref();
    let a = decode(path)?;
    if !a.integer && a.values.iter().any(|v| v.fract() != 0.0) {
        return Err(Error::Format(format!("{}: non-integer data cannot be read as labels", path.display())));
    }
    into_labels(a)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<(ScalarField, VolumeHeader)> {
    into_image(decode(path.as_ref())?)
}

/// Save by extension: `.nii` or `.nii.gz` for NIfTI-1, anything else for
/// the raw format (gzip-compressed when the name ends in `.gz`).
pub fn save_volume(data: VolumeData, header: &VolumeHeader, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let gz = name.ends_with(".gz");
    let stem = name.strip_suffix(".gz").unwrap_or(name);
    let bytes = if stem.ends_with(".nii") {
        nifti::encode(data, header)?
    } else {
        raw::encode(data, header.provenance.as_deref())?
    };
    let bytes = if gz {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes)?;
        enc.finish()?
    } else {
        bytes
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<crate::config::SynthesisConfig> {
    let text = fs::read_to_string(path)?;
    Ok(parse_config(&text)?)
}

pub fn save_config(cfg: &crate::config::SynthesisConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serialize_config(cfg))?;
    Ok(())
}
