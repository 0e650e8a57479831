use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelsynth::stream::SampleFormat;
use labelsynth::Stage;

#[derive(Debug, Parser)]
#[command(name = "labelsynth", version, about = "Synthesize image/label training pairs from label maps")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a batch of samples to a directory.
    Generate(GenerateArgs),
    /// Produce samples continuously into a directory that consumers drain.
    Stream(StreamArgs),
    /// Run the HTTP preview service.
    Serve(ServeArgs),
    /// Export the basic noise constructions as PNG images.
    NoiseDemo(NoiseDemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[value(name = "nii.gz")]
    NiftiGz,
    #[value(name = "nii")]
    Nifti,
    Raw,
}

impl From<Format> for SampleFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::NiftiGz => SampleFormat::NiftiGz,
            Format::Nifti => SampleFormat::Nifti,
            Format::Raw => SampleFormat::Raw,
        }
    }
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Label maps (NIfTI or raw); each seed picks one.
    #[arg(long, num_args = 1.., required = true)]
    pub labels: Vec<PathBuf>,

    /// Configuration file (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value = "nii.gz")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub inputs: Inputs,

    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 25)]
    pub count: u64,

    /// Also export the middle slice of each image and label map as PNG.
    #[arg(long)]
    pub preview_png: bool,

    /// Stop the chain after this stage.
    #[arg(long, value_parser = parse_stage)]
    pub cutoff: Option<Stage>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub inputs: Inputs,

    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of seeds; runs until interrupted when omitted.
    #[arg(long)]
    pub count: Option<u64>,

    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Pause while this many samples wait for a consumer.
    #[arg(long)]
    pub max_pending: Option<usize>,

    /// Seeds claimed by a worker at a time.
    #[arg(long, default_value_t = 1)]
    pub block_size: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Label maps to serve; added to those found in the roster directory.
    #[arg(long, num_args = 1..)]
    pub labels: Vec<PathBuf>,

    /// Directory of label maps [env: LABELSYNTH_ROSTER].
    #[arg(long)]
    pub roster: Option<PathBuf>,

    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Listening port [env: LABELSYNTH_PORT, default 8350].
    #[arg(long)]
    pub port: Option<u16>,

    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct NoiseDemoArgs {
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Image side length.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

pub fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: labelsynth::Error| e.to_string())
}
