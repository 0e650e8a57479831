//! Domain-randomized synthesis of image/label training pairs from
//! anatomical label maps.
//!
//! The generative model turns a label map `s` and a seed `z` into a new pair
//! `(x, s_x)`: the label map is moved and deformed, each label receives a
//! random intensity, and the resulting image passes through a randomized
//! corruption chain (bias field, blur, noise, gamma, resolution loss,
//! partial field of view).
//!
//! ```no_run
//! use labelsynth::{generate, io, SynthesisConfig};
//!
//! let (labels, _header) = io::load_labels("subject.nii.gz").unwrap();
//! let pair = generate(&labels.volume, &SynthesisConfig::default(), 42).unwrap();
//! assert_eq!(pair.image.shape(), pair.labels.shape());
//! ```

pub mod config;
pub mod corrupt;
pub mod error;
pub mod fields;
pub mod io;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod spatial;
pub mod stream;
pub mod synthesis;

pub use config::{max_effect_config, SynthesisConfig};
pub use error::{ConfigError, Error, FieldIssue, Result};
pub use fields::{Grid, Kernel1D, LabelVolume, ScalarField, Shape, VectorField};
pub use pipeline::{generate, generate_until, preview_batch, qc_flags, Provenance, QcFlag, SamplePair, Stage};
pub use rng::RngStream;
