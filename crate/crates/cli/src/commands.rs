//! Batch generation, streaming and the noise demo.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use labelsynth::io::{self, slice_png, VolumeData};
use labelsynth::noise::{fractal_noise, perlin_noise, smoothed_noise, value_noise, NoiseSpec};
use labelsynth::pipeline::{generate_with, GenerateOptions};
use labelsynth::stream::{
    roster_index, run_to_directory, sample_dir_name, write_sample, DirectorySink, FaultHook, RosterEntry, StreamJob,
    WritePhase,
};
use labelsynth::{qc_flags, Grid, Result, SamplePair, Shape, SynthesisConfig};

use crate::cli::{GenerateArgs, NoiseDemoArgs, StreamArgs};
use crate::exit;

/// Environment variable that aborts the process inside a sample write:
/// `SEED` or `SEED:PHASE` with PHASE one of `image`, `labels`, `publish`.
pub const CRASH_ENV: &str = "LABELSYNTH_CRASH_AT";

pub fn load_config(path: Option<&Path>) -> Result<SynthesisConfig> {
    match path {
        Some(p) => io::load_config(p),
        None => Ok(SynthesisConfig::default()),
    }
}

/// Load label maps, identified by `id(path)`.
pub fn load_roster(paths: &[PathBuf], id: impl Fn(&Path) -> String) -> Result<Vec<RosterEntry>> {
    paths
        .iter()
        .map(|p| {
            let (loaded, _) = io::load_labels(p)?;
            log::info!(
                "loaded {} ({:?}, {} labels)",
                p.display(),
                loaded.volume.shape().extents(),
                loaded.volume.label_count()
            );
            Ok(RosterEntry {
                id: id(p),
                labels: Arc::new(loaded.volume),
            })
        })
        .collect()
}

fn path_id(p: &Path) -> String {
    p.display().to_string()
}

/// Middle slice along the first axis, or the whole image in 2-D.
fn preview_slice(pair: &SamplePair) -> (usize, usize) {
    (0, pair.image.shape().extent(0) / 2)
}

fn write_previews(dir: &Path, pair: &SamplePair) -> Result<()> {
    let (axis, index) = preview_slice(pair);
    let stem = sample_dir_name(pair.seed);
    fs::write(
        dir.join(format!("{stem}-image.png")),
        slice_png(VolumeData::Image(&pair.image), axis, index)?,
    )?;
    fs::write(
        dir.join(format!("{stem}-labels.png")),
        slice_png(VolumeData::Labels(&pair.labels), axis, index)?,
    )?;
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<i32> {
    let cfg = load_config(args.inputs.config.as_deref())?;
    cfg.validate()?;
    let roster = load_roster(&args.inputs.labels, path_id)?;
    let out = &args.inputs.out;
    fs::create_dir_all(out)?;
    let previews = out.join("previews");
    if args.preview_png {
        fs::create_dir_all(&previews)?;
    }
    let mut failed = 0usize;
    for seed in args.seed..args.seed.saturating_add(args.count) {
        let entry = &roster[roster_index(seed, roster.len())];
        let opts = GenerateOptions {
            cutoff: args.cutoff.unwrap_or(labelsynth::Stage::last()),
            label_map: Some(entry.id.clone()),
        };
        let pair = match generate_with(&entry.labels, &cfg, seed, &opts) {
            Ok(p) => p,
            Err(e) if e.is_config() => return Err(e),
            Err(e) => {
                log::error!("seed {seed}: {e}");
                failed += 1;
                continue;
            }
        };
        for flag in qc_flags(&pair) {
            log::warn!("seed {seed}: {}", flag.name());
        }
        let existing = out.join(sample_dir_name(seed));
        if existing.exists() {
            fs::remove_dir_all(&existing)?;
        }
        let dir = write_sample(out, &pair, args.inputs.format.into(), None)?;
        if args.preview_png {
            write_previews(&previews, &pair)?;
        }
        println!("{}", dir.display());
    }
    if failed > 0 {
        eprintln!("{failed} of {} samples failed", args.count);
        return Ok(exit::GENERATION);
    }
    Ok(exit::OK)
}

fn crash_hook() -> Option<FaultHook> {
    let spec = std::env::var(CRASH_ENV).ok()?;
    let (seed, phase) = match spec.split_once(':') {
        Some((s, p)) => (s, p),
        None => (spec.as_str(), "labels"),
    };
    let seed: u64 = seed.trim().parse().ok()?;
    let phase = match phase.trim() {
        "image" => WritePhase::ImageWritten,
        "publish" => WritePhase::BeforePublish,
        _ => WritePhase::LabelsWritten,
    };
    Some(Arc::new(move |s, p| {
        if s == seed && p == phase {
            eprintln!("{CRASH_ENV}: aborting at seed {s} ({p:?})");
            std::process::abort();
        }
    }))
}

/// Set the returned flag on SIGINT or SIGTERM.
fn stop_on_signal() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() else {
            return;
        };
        rt.block_on(async {
            #[cfg(unix)]
            {
                use tokio::signal::unix::{signal, SignalKind};
                let Ok(mut term) = signal(SignalKind::terminate()) else { return };
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            #[cfg(not(unix))]
            let _ = tokio::signal::ctrl_c().await;
        });
        log::info!("stopping after samples in progress");
        flag.store(true, std::sync::atomic::Ordering::SeqCst);
    });
    stop
}

pub fn stream(args: &StreamArgs) -> Result<i32> {
    let cfg = load_config(args.inputs.config.as_deref())?;
    let roster = load_roster(&args.inputs.labels, path_id)?;
    let mut job = StreamJob::new(roster, cfg);
    job.base_seed = args.seed;
    job.count = args.count;
    job.block_size = args.block_size;
    job.workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let sink = DirectorySink {
        dir: args.inputs.out.clone(),
        format: args.inputs.format.into(),
        max_pending: args.max_pending,
        fault: crash_hook(),
    };
    let report = run_to_directory(&job, &sink, Some(stop_on_signal()))?;
    println!(
        "written {}, already present {}, failed {}",
        report.written.len(),
        report.skipped_existing.len(),
        report.failed.len()
    );
    if !report.failed.is_empty() {
        eprintln!("failed seeds: {:?}", report.failed);
    }
    Ok(exit::OK)
}

/// FWHM to Gaussian standard deviation.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt())
}

pub fn noise_demo(args: &NoiseDemoArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    let n = args.size;
    let grid = Grid::unit(Shape::new(&[n, n])?);
    let rng = labelsynth::RngStream::new(args.seed, 0);
    let low = (n / 64).max(1) as u32;
    let sigma = fwhm_to_sigma(n as f64 / 4.0);
    let fields = [
        ("value", value_noise(&grid, &NoiseSpec::value(low, low), rng.split(0))?),
        ("smoothed", smoothed_noise(&grid, &NoiseSpec::smoothed(sigma, sigma), rng.split(1))?),
        ("perlin", perlin_noise(&grid, &NoiseSpec::perlin(4, 4), rng.split(2))?),
        ("fractal", fractal_noise(&grid, &NoiseSpec::fractal(2, 2, 5), rng.split(3))?),
    ];
    for (name, f) in fields {
        let path = args.out.join(format!("{name}.png"));
        io::export_slice(VolumeData::Image(&f), 0, 0, &path)?;
        println!("{}", path.display());
    }
    Ok(exit::OK)
}
