use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use labelsynth::config::{IntRange, Range};
use labelsynth::stream::{
    read_sample, roster_index, run_stream, run_to_directory, Delivery, DirectoryConsumer, DirectorySink, RosterEntry,
    SampleFormat, StreamJob, WritePhase,
};
use labelsynth::{Grid, LabelVolume, Shape, SynthesisConfig};

fn cube(n: usize, offset: usize) -> LabelVolume {
    let shape = Shape::new(&[n, n, n]).unwrap();
    let labels = (0..shape.len())
        .map(|i| {
            let p = shape.unravel(i);
            u32::from(p.iter().all(|&k| k >= n / 4 + offset && k < 3 * n / 4))
        })
        .collect();
    LabelVolume::new(Grid::unit(shape), labels, 2).unwrap()
}

fn job(count: u64) -> StreamJob {
    let mut cfg = SynthesisConfig::default();
    cfg.spatial.translation_mm = Range(-3.0, 3.0);
    cfg.spatial.warp_strength_mm = Range(0.0, 2.0);
    cfg.spatial.warp_control_points = IntRange(2, 4);
    let roster = vec![
        RosterEntry {
            id: "a".into(),
            labels: Arc::new(cube(12, 0)),
        },
        RosterEntry {
            id: "b".into(),
            labels: Arc::new(cube(12, 1)),
        },
    ];
    let mut job = StreamJob::new(roster, cfg);
    job.count = Some(count);
    job
}

fn sample_dirs(dir: &std::path::Path) -> (Vec<String>, Vec<String>) {
    let mut done = Vec::new();
    let mut other = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        if name.starts_with("seed-") && !name.ends_with(".claimed") {
            done.push(name);
        } else {
            other.push(name);
        }
    }
    (done, other)
}

#[test]
fn bounded_queue_delivers_every_seed_once() {
    let mut j = job(100);
    j.workers = 4;
    j.capacity = 2;
    let reference = j.clone();
    let handle = run_stream(j).unwrap();
    let mut seen = BTreeSet::new();
    while let Some(item) = handle.recv() {
        let pair = item.unwrap();
        if pair.seed % 10 == 0 {
            thread::sleep(Duration::from_millis(20));
            assert_eq!(pair, reference.sample(pair.seed).unwrap());
        }
        assert!(seen.insert(pair.seed), "seed {} delivered twice", pair.seed);
    }
    assert_eq!(seen, (0..100).collect());
    assert!(handle.high_water() <= 2);
}

#[test]
fn seed_order_is_independent_of_worker_count() {
    let hashes = |workers: usize| -> Vec<u64> {
        let mut j = job(20);
        j.workers = workers;
        j.block_size = 3;
        j.delivery = Delivery::SeedOrder;
        run_stream(j).unwrap().map(|i| i.unwrap().image_hash()).collect()
    };
    assert_eq!(hashes(1), hashes(4));
}

#[test]
fn roster_choice_is_a_function_of_the_seed() {
    let j = job(1);
    let picks: Vec<usize> = (0..200).map(|z| roster_index(z, 2)).collect();
    assert_eq!(picks, (0..200).map(|z| roster_index(z, 2)).collect::<Vec<_>>());
    assert!(picks.contains(&0) && picks.contains(&1));
    for z in 0..6 {
        let pair = j.sample(z).unwrap();
        let id = ["a", "b"][roster_index(z, 2)];
        assert_eq!(pair.provenance.label_map.as_deref(), Some(id));
    }
}

#[test]
fn crash_mid_write_leaves_no_partial_samples_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(100);
    j.workers = 4;
    let mut sink = DirectorySink::new(dir.path());
    sink.format = SampleFormat::NiftiGz;
    sink.fault = Some(Arc::new(|seed, phase| {
        if seed == 37 && phase == WritePhase::LabelsWritten {
            panic!("injected crash");
        }
    }));
    let crashed = catch_unwind(AssertUnwindSafe(|| run_to_directory(&j, &sink, None)));
    assert!(crashed.is_err());
    let (done, other) = sample_dirs(dir.path());
    assert!(other.iter().all(|n| n.starts_with(".tmp-")), "{other:?}");
    assert!(!done.is_empty() && done.len() < 100);
    // Every published sample is complete.
    for name in &done {
        let pair = read_sample(&dir.path().join(name)).unwrap();
        assert_eq!(pair, j.sample(pair.seed).unwrap());
    }

    sink.fault = None;
    let report = run_to_directory(&j, &sink, None).unwrap();
    assert_eq!(report.written.len() + report.skipped_existing.len(), 100);
    let (done, other) = sample_dirs(dir.path());
    assert!(other.is_empty(), "{other:?}");
    let seeds: BTreeSet<u64> = done
        .iter()
        .map(|n| read_sample(&dir.path().join(n)).unwrap().seed)
        .collect();
    assert_eq!(seeds, (0..100).collect());
}

#[test]
fn producer_and_consumer_share_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(40);
    j.workers = 2;
    let mut sink = DirectorySink::new(dir.path());
    sink.format = SampleFormat::Raw;
    sink.max_pending = Some(3);
    let done = Arc::new(AtomicBool::new(false));
    let consumed = thread::scope(|scope| {
        let consumer = scope.spawn(|| {
            let c = DirectoryConsumer::new(dir.path(), Delivery::Arrival);
            let mut seeds = Vec::new();
            loop {
                match c.next_timeout(Duration::from_millis(50)).unwrap() {
                    Some(pair) => seeds.push(pair.seed),
                    None if done.load(Ordering::SeqCst) => break,
                    None => {}
                }
            }
            seeds
        });
        run_to_directory(&j, &sink, None).unwrap();
        done.store(true, Ordering::SeqCst);
        consumer.join().unwrap()
    });
    let unique: BTreeSet<u64> = consumed.iter().copied().collect();
    assert_eq!(unique.len(), consumed.len());
    assert_eq!(unique, (0..40).collect());
    // Consumed seeds are never produced again.
    assert!(run_to_directory(&j, &sink, None).unwrap().written.is_empty());
}

#[test]
fn stop_flag_ends_an_unbounded_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(1);
    j.count = None;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let sink = DirectorySink::new(dir.path());
    let report = thread::scope(|scope| {
        let h = scope.spawn(|| run_to_directory(&j, &sink, Some(flag)).unwrap());
        thread::sleep(Duration::from_millis(300));
        stop.store(true, Ordering::SeqCst);
        h.join().unwrap()
    });
    assert!(!report.written.is_empty());
    let (done, other) = sample_dirs(dir.path());
    assert_eq!(done.len(), report.written.len());
    assert!(other.is_empty());
}
