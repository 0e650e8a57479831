//! Continuous sample production.
//!
//! Workers claim contiguous blocks of seeds from a shared counter, so which
//! seeds exist never depends on the number of workers. Finished samples go
//! either to a bounded in-memory queue or to a directory.
//!
//! Directory protocol: a sample is written into `.tmp-seed-N/` and published
//! by renaming it to `seed-N/`. A consumer claims a sample by renaming it to
//! `seed-N.claimed/`, reads it, records the seed in `consumed.log` and
//! deletes it. Readers therefore only ever see complete samples, and a
//! producer restarted after a crash discards stale temporaries and resumes
//! with the seeds that are neither published nor consumed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::SynthesisConfig;
use crate::error::{Error, Result};
use crate::fields::LabelVolume;
use crate::io::{self, DataKind, VolumeData, VolumeHeader};
use crate::pipeline::{generate_with, GenerateOptions, Provenance, SamplePair, SeedFailure};
use crate::rng::RngStream;

/// One label map available to the generator.
#[derive(Clone, Debug)]
pub struct RosterEntry {
    pub id: String,
    pub labels: Arc<LabelVolume>,
}

/// Index of the roster entry used for `seed`.
pub fn roster_index(seed: u64, roster_len: usize) -> usize {
    if roster_len <= 1 {
        return 0;
    }
    RngStream::new(seed, 0).split(0).draws().index(roster_len)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Delivery {
    /// Samples are handed out as soon as they are ready.
    #[default]
    Arrival,
    /// Samples are handed out in increasing seed order.
    SeedOrder,
}

#[derive(Clone, Debug)]
pub struct StreamJob {
    pub roster: Vec<RosterEntry>,
    pub config: SynthesisConfig,
    pub base_seed: u64,
    /// Number of seeds to produce; unbounded when `None`.
    pub count: Option<u64>,
    pub capacity: usize,
    pub workers: usize,
    pub delivery: Delivery,
    /// Seeds claimed by a worker at a time.
    pub block_size: u64,
}

impl StreamJob {
    pub fn new(roster: Vec<RosterEntry>, config: SynthesisConfig) -> Self {
        Self {
            roster,
            config,
            base_seed: 0,
            count: None,
            capacity: 8,
            workers: 1,
            delivery: Delivery::Arrival,
            block_size: 1,
        }
    }

    fn check(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::Range("the label-map roster is empty".into()));
        }
        if self.capacity < 1 || self.workers < 1 || self.block_size < 1 {
            return Err(Error::Range("capacity, worker count and block size must be at least 1".into()));
        }
        self.config.validate()?;
        Ok(())
    }

    fn end_seed(&self) -> u64 {
        self.count.map_or(u64::MAX, |c| self.base_seed.saturating_add(c))
    }

    /// Generate the sample for one seed.
    pub fn sample(&self, seed: u64) -> std::result::Result<SamplePair, SeedFailure> {
        let entry = &self.roster[roster_index(seed, self.roster.len())];
        let opts = GenerateOptions {
            label_map: Some(entry.id.clone()),
            ..Default::default()
        };
        generate_with(&entry.labels, &self.config, seed, &opts).map_err(|error| {
            log::warn!("seed {seed} failed and is skipped: {error}");
            SeedFailure { seed, error }
        })
    }
}

/// Hands out contiguous seed blocks.
struct SeedBlocks {
    next: AtomicU64,
    end: u64,
    block: u64,
}

impl SeedBlocks {
    fn claim(&self) -> Option<std::ops::Range<u64>> {
        let start = self.next.fetch_add(self.block, Ordering::SeqCst);
        (start < self.end).then(|| start..start.saturating_add(self.block).min(self.end))
    }
}

pub type Item = std::result::Result<SamplePair, SeedFailure>;

struct QueueState {
    arrival: VecDeque<Item>,
    ordered: BTreeMap<u64, Item>,
    next_seed: u64,
    running: usize,
    abandoned: bool,
    high_water: usize,
}

impl QueueState {
    fn len(&self) -> usize {
        self.arrival.len() + self.ordered.len()
    }
}

struct Queue {
    state: Mutex<QueueState>,
    not_full: Condvar,
    not_empty: Condvar,
    capacity: usize,
    delivery: Delivery,
}

fn item_seed(item: &Item) -> u64 {
    match item {
        Ok(p) => p.seed,
        Err(f) => f.seed,
    }
}

impl Queue {
    /// Block until the item fits. In seed order a sample is admitted only
    /// inside the window `[next, next + capacity)`, which bounds the buffer
    /// and keeps the next awaited seed admissible.
    fn push(&self, item: Item) {
        let seed = item_seed(&item);
        let mut st = self.state.lock().unwrap();
        loop {
            if st.abandoned {
                return;
            }
            let fits = match self.delivery {
                Delivery::Arrival => st.len() < self.capacity,
                Delivery::SeedOrder => seed < st.next_seed.saturating_add(self.capacity as u64),
            };
            if fits {
                break;
            }
            st = self.not_full.wait(st).unwrap();
        }
        match self.delivery {
            Delivery::Arrival => st.arrival.push_back(item),
            Delivery::SeedOrder => {
                st.ordered.insert(seed, item);
            }
        }
        st.high_water = st.high_water.max(st.len());
        self.not_empty.notify_all();
    }

    fn pop(&self) -> Option<Item> {
        let mut st = self.state.lock().unwrap();
        loop {
            let item = match self.delivery {
                Delivery::Arrival => st.arrival.pop_front(),
                Delivery::SeedOrder => {
                    let next = st.next_seed;
                    st.ordered.remove(&next)
                }
            };
            if let Some(item) = item {
                if self.delivery == Delivery::SeedOrder {
                    st.next_seed = item_seed(&item) + 1;
                }
                self.not_full.notify_all();
                return Some(item);
            }
            if st.running == 0 {
                // Seed order with gaps can only happen after a shutdown;
                // hand out what is left in order.
                let first = st.ordered.keys().next().copied();
                return first.and_then(|k| st.ordered.remove(&k));
            }
            st = self.not_empty.wait(st).unwrap();
        }
    }
}

/// A running in-memory stream. Dropping it stops the workers and discards
/// undelivered samples.
pub struct StreamHandle {
    queue: Arc<Queue>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl StreamHandle {
    /// Next sample, or `None` once every seed has been delivered (or the
    /// stream was shut down and drained).
    pub fn recv(&self) -> Option<Item> {
        self.queue.pop()
    }

    /// Stop claiming new seeds. Samples already in flight are still
    /// delivered by [`recv`](Self::recv).
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Largest number of samples held in the queue so far.
    pub fn high_water(&self) -> usize {
        self.queue.state.lock().unwrap().high_water
    }

    pub fn capacity(&self) -> usize {
        self.queue.capacity
    }
}

impl Iterator for StreamHandle {
    type Item = Item;

    fn next(&mut self) -> Option<Item> {
        self.recv()
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        {
            let mut st = self.queue.state.lock().unwrap();
            st.abandoned = true;
            self.queue.not_full.notify_all();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Start producing into a bounded in-memory queue.
pub fn run_stream(job: StreamJob) -> Result<StreamHandle> {
    job.check()?;
    let job = Arc::new(job);
    let queue = Arc::new(Queue {
        state: Mutex::new(QueueState {
            arrival: VecDeque::new(),
            ordered: BTreeMap::new(),
            next_seed: job.base_seed,
            running: job.workers,
            abandoned: false,
            high_water: 0,
        }),
        not_full: Condvar::new(),
        not_empty: Condvar::new(),
        capacity: job.capacity,
        delivery: job.delivery,
    });
    let stop = Arc::new(AtomicBool::new(false));
    let blocks = Arc::new(SeedBlocks {
        next: AtomicU64::new(job.base_seed),
        end: job.end_seed(),
        block: job.block_size,
    });
    let workers = (0..job.workers)
        .map(|w| {
            let (job, queue, stop, blocks) = (job.clone(), queue.clone(), stop.clone(), blocks.clone());
            thread::Builder::new()
                .name(format!("labelsynth-worker-{w}"))
                .spawn(move || {
                    'outer: while !stop.load(Ordering::SeqCst) {
                        let Some(range) = blocks.claim() else { break };
                        for seed in range {
                            if queue.state.lock().unwrap().abandoned {
                                break 'outer;
                            }
                            queue.push(job.sample(seed));
                        }
                    }
                    let mut st = queue.state.lock().unwrap();
                    st.running -= 1;
                    queue.not_empty.notify_all();
                })
                .expect("spawn worker thread")
        })
        .collect();
    Ok(StreamHandle { queue, stop, workers })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFormat {
    Nifti,
    #[default]
    NiftiGz,
    Raw,
}

impl SampleFormat {
    fn extension(self) -> &'static str {
        match self {
            SampleFormat::Nifti => "nii",
            SampleFormat::NiftiGz => "nii.gz",
            SampleFormat::Raw => "raw",
        }
    }
}

/// Points inside the write of one sample, for crash-injection hooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WritePhase {
    ImageWritten,
    LabelsWritten,
    BeforePublish,
}

pub type FaultHook = Arc<dyn Fn(u64, WritePhase) + Send + Sync>;

pub const IMAGE_FILE: &str = "image";
pub const LABELS_FILE: &str = "labels";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const CONSUMED_LOG: &str = "consumed.log";

pub fn sample_dir_name(seed: u64) -> String {
    format!("seed-{seed:010}")
}

fn parse_sample_dir(name: &str) -> Option<(u64, bool)> {
    let rest = name.strip_prefix("seed-")?;
    match rest.strip_suffix(".claimed") {
        Some(s) => s.parse().ok().map(|s| (s, true)),
        None => rest.parse().ok().map(|s| (s, false)),
    }
}

/// Write one sample atomically into `dir`.
pub fn write_sample(dir: &Path, pair: &SamplePair, format: SampleFormat, fault: Option<&FaultHook>) -> Result<PathBuf> {
    let name = sample_dir_name(pair.seed);
    let tmp = dir.join(format!(".tmp-{name}"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let prov = pair.provenance.to_json();
    let ext = format.extension();
    let header = VolumeHeader::for_grid(pair.image.grid(), DataKind::Image).with_provenance(prov.clone());
    io::save_volume(VolumeData::Image(&pair.image), &header, tmp.join(format!("{IMAGE_FILE}.{ext}")))?;
    let hook = |phase| {
        if let Some(f) = fault {
            f(pair.seed, phase)
        }
    };
    hook(WritePhase::ImageWritten);
    let header = VolumeHeader::for_grid(pair.labels.grid(), DataKind::Labels).with_provenance(prov.clone());
    io::save_volume(VolumeData::Labels(&pair.labels), &header, tmp.join(format!("{LABELS_FILE}.{ext}")))?;
    hook(WritePhase::LabelsWritten);
    fs::write(tmp.join(PROVENANCE_FILE), &prov)?;
    hook(WritePhase::BeforePublish);
    let done = dir.join(name);
    fs::rename(&tmp, &done)?;
    Ok(done)
}

/// Read a published or claimed sample directory.
pub fn read_sample(path: &Path) -> Result<SamplePair> {
    let prov = Provenance::from_json(&fs::read_to_string(path.join(PROVENANCE_FILE))?)?;
    let find = |stem: &str| -> Result<PathBuf> {
        ["nii.gz", "nii", "raw"]
            .iter()
            .map(|e| path.join(format!("{stem}.{e}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Format(format!("{} holds no {stem} volume", path.display())))
    };
    let (image, _) = io::load_image(find(IMAGE_FILE)?)?;
    let labels_path = find(LABELS_FILE)?;
    // Stored ids are already contiguous; read them back verbatim.
    let (loaded, _) = io::load_labels(&labels_path)?;
    let labels = if loaded.mapping.iter().enumerate().all(|(i, &m)| i as u64 == m) {
        loaded.volume
    } else {
        let (raw, _) = io::load_image(&labels_path)?;
        let ids: Vec<u32> = raw.values().iter().map(|&v| v as u32).collect();
        let count = ids.iter().copied().max().unwrap_or(0).max(1) + 1;
        LabelVolume::new(raw.grid().clone(), ids, count)?
    };
    Ok(SamplePair {
        image,
        labels,
        seed: prov.seed,
        provenance: prov,
    })
}

/// Seeds listed in the consumed log.
pub fn consumed_seeds(dir: &Path) -> Result<BTreeSet<u64>> {
    match fs::read_to_string(dir.join(CONSUMED_LOG)) {
        Ok(text) => Ok(text.lines().filter_map(|l| l.trim().parse().ok()).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeSet::new()),
        Err(e) => Err(e.into()),
    }
}

/// Published, claimed and consumed seeds, after removing stale temporaries.
fn recover(dir: &Path) -> Result<BTreeSet<u64>> {
    let mut present = consumed_seeds(dir)?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(".tmp-") {
            log::info!("removing incomplete sample {name}");
            fs::remove_dir_all(entry.path())?;
        } else if let Some((seed, _)) = parse_sample_dir(&name) {
            present.insert(seed);
        }
    }
    Ok(present)
}

/// Directory output options.
#[derive(Clone, Default)]
pub struct DirectorySink {
    pub dir: PathBuf,
    pub format: SampleFormat,
    /// Wait while this many unclaimed samples are published.
    pub max_pending: Option<usize>,
    pub fault: Option<FaultHook>,
}

impl DirectorySink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            ..Default::default()
        }
    }

    fn pending(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| matches!(parse_sample_dir(&e.file_name().to_string_lossy()), Some((_, false))))
                    .count()
            })
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReport {
    pub written: Vec<u64>,
    pub skipped_existing: Vec<u64>,
    pub failed: Vec<u64>,
}

/// Produce `job.count` seeds into a directory, resuming a previous run.
/// Stops early when `stop` is set.
pub fn run_to_directory(job: &StreamJob, sink: &DirectorySink, stop: Option<Arc<AtomicBool>>) -> Result<StreamReport> {
    job.check()?;
    fs::create_dir_all(&sink.dir)?;
    let present = recover(&sink.dir)?;
    let stop = stop.unwrap_or_default();
    let blocks = SeedBlocks {
        next: AtomicU64::new(job.base_seed),
        end: job.end_seed(),
        block: job.block_size,
    };
    let report = Mutex::new(StreamReport::default());
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    thread::scope(|scope| {
        for _ in 0..job.workers {
            scope.spawn(|| {
                'outer: while let Some(range) = blocks.claim() {
                    for seed in range {
                        if stop.load(Ordering::SeqCst) || first_error.lock().unwrap().is_some() {
                            break 'outer;
                        }
                        if present.contains(&seed) {
                            report.lock().unwrap().skipped_existing.push(seed);
                            continue;
                        }
                        if let Some(max) = sink.max_pending {
                            while sink.pending() >= max && !stop.load(Ordering::SeqCst) {
                                thread::sleep(Duration::from_millis(5));
                            }
                        }
                        match job.sample(seed) {
                            Ok(pair) => match write_sample(&sink.dir, &pair, sink.format, sink.fault.as_ref()) {
                                Ok(_) => report.lock().unwrap().written.push(seed),
                                Err(e) => {
                                    first_error.lock().unwrap().get_or_insert(e);
                                    break 'outer;
                                }
                            },
                            Err(_) => report.lock().unwrap().failed.push(seed),
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let mut report = report.into_inner().unwrap();
    report.written.sort_unstable();
    report.skipped_existing.sort_unstable();
    report.failed.sort_unstable();
    Ok(report)
}

/// A sample taken from a directory; [`finish`](Self::finish) deletes it.
pub struct ClaimedSample {
    pub pair: SamplePair,
    path: PathBuf,
    dir: PathBuf,
}

impl ClaimedSample {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Record the seed as consumed and delete the files.
    pub fn finish(self) -> Result<SamplePair> {
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(CONSUMED_LOG))?;
        log.write_all(format!("{}\n", self.pair.seed).as_bytes())?;
        fs::remove_dir_all(&self.path)?;
        Ok(self.pair)
    }
}

/// Claims published samples from a directory.
pub struct DirectoryConsumer {
    dir: PathBuf,
    delivery: Delivery,
}

impl DirectoryConsumer {
    pub fn new(dir: impl Into<PathBuf>, delivery: Delivery) -> Self {
        Self {
            dir: dir.into(),
            delivery,
        }
    }

    fn published(&self) -> Result<Vec<(u64, PathBuf, std::time::SystemTime)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if let Some((seed, false)) = parse_sample_dir(&entry.file_name().to_string_lossy()) {
                let modified = entry.metadata()?.modified()?;
                out.push((seed, entry.path(), modified));
            }
        }
        match self.delivery {
            Delivery::SeedOrder => out.sort_by_key(|e| e.0),
            Delivery::Arrival => out.sort_by_key(|e| (e.2, e.0)),
        }
        Ok(out)
    }

    /// Claim the next available sample without waiting.
    pub fn try_claim(&self) -> Result<Option<ClaimedSample>> {
        for (seed, path, _) in self.published()? {
            let claimed = self.dir.join(format!("{}.claimed", sample_dir_name(seed)));
            match fs::rename(&path, &claimed) {
                Ok(()) => {
                    let pair = read_sample(&claimed)?;
                    return Ok(Some(ClaimedSample {
                        pair,
                        path: claimed,
                        dir: self.dir.clone(),
                    }));
                }
                // Another consumer won the race.
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(None)
    }

    /// Claim, read and delete the next sample, waiting up to `timeout`.
    pub fn next_timeout(&self, timeout: Duration) -> Result<Option<SamplePair>> {
        let start = std::time::Instant::now();
        loop {
            if let Some(c) = self.try_claim()? {
                return c.finish().map(Some);
            }
            if start.elapsed() >= timeout {
                return Ok(None);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}
