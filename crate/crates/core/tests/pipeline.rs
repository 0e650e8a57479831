use std::collections::BTreeSet;

use labelsynth::config::{IntRange, Range, StageProbabilities};
use labelsynth::fields::minmax_normalize;
use labelsynth::io::{self, DataKind, VolumeData, VolumeHeader};
use labelsynth::pipeline::{generate_with, regenerate, GenerateOptions};
use labelsynth::synthesis::{render_mean_image, LabelRange};
use labelsynth::{generate, generate_until, Grid, LabelVolume, Provenance, Shape, Stage, SynthesisConfig};
use proptest::prelude::*;

/// Nested spheres: background 0, shell 1, core 2.
fn phantom(n: usize) -> LabelVolume {
    let shape = Shape::new(&[n, n, n]).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    let labels = (0..shape.len())
        .map(|i| {
            let d = shape.unravel(i).iter().map(|&k| (k as f64 - c).powi(2)).sum::<f64>().sqrt();
            if d <= n as f64 / 6.0 {
                2
            } else if d <= n as f64 / 3.0 {
                1
            } else {
                0
            }
        })
        .collect();
    LabelVolume::new(Grid::unit(shape), labels, 3).unwrap()
}

/// Default ranges with translation and warps scaled to a 12-24 voxel
/// phantom, so the anatomy never leaves the field of view.
fn small_config() -> SynthesisConfig {
    let mut c = SynthesisConfig::default();
    c.spatial.translation_mm = Range(-4.0, 4.0);
    c.spatial.warp_strength_mm = Range(0.0, 3.0);
    c.spatial.warp_control_points = IntRange(2, 4);
    c.corruption.brain_labels = Some(vec![1, 2]);
    c
}

fn identity_spatial(c: &mut SynthesisConfig) {
    c.spatial.translation_mm = Range(0.0, 0.0);
    c.spatial.rotation_deg = Range(0.0, 0.0);
    c.spatial.scaling_pct = Range(100.0, 100.0);
    c.spatial.shear_pct = Range(100.0, 100.0);
    c.spatial.warp_strength_mm = Range(0.0, 0.0);
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn worker_count_does_not_change_the_output() {
    let s = phantom(24);
    let mut cfg = small_config();
    cfg.probability = StageProbabilities::always();
    for seed in [0u64, 1, 99] {
        let one = in_pool(1, || generate(&s, &cfg, seed).unwrap());
        let four = in_pool(4, || generate(&s, &cfg, seed).unwrap());
        assert_eq!(one.image_hash(), four.image_hash());
        assert_eq!(one, four);
    }
}

#[test]
fn fresh_seeds_give_fresh_images() {
    let s = phantom(16);
    let cfg = small_config();
    let hashes: BTreeSet<u64> = (0..200u64).map(|z| generate(&s, &cfg, z).unwrap().image_hash()).collect();
    assert_eq!(hashes.len(), 200);
}

#[test]
fn provenance_regenerates_through_json_and_nifti() {
    let dir = tempfile::tempdir().unwrap();
    let s = phantom(20);
    let mut cfg = small_config();
    cfg.probability = StageProbabilities::always();
    for seed in 0..5u64 {
        let opts = GenerateOptions {
            cutoff: Stage::last(),
            label_map: Some("phantom".into()),
        };
        let pair = generate_with(&s, &cfg, seed, &opts).unwrap();
        let p = dir.path().join(format!("x{seed}.nii.gz"));
        let header = VolumeHeader::for_grid(pair.image.grid(), DataKind::Image).with_provenance(pair.provenance.to_json());
        io::save_volume(VolumeData::Image(&pair.image), &header, &p).unwrap();
        let (image, h) = io::load_image(&p).unwrap();
        assert_eq!(image, pair.image);
        let prov = Provenance::from_json(h.provenance.as_deref().unwrap()).unwrap();
        assert_eq!(prov, pair.provenance);
        assert_eq!(regenerate(&s, &prov).unwrap(), pair);
    }
}

#[test]
fn noise_free_regions_are_constant_and_equal_the_lut() {
    let s = phantom(32);
    let cfg = SynthesisConfig {
        probability: StageProbabilities::never(),
        ..Default::default()
    };
    for seed in 0..3u64 {
        let pair = generate(&s, &cfg, seed).unwrap();
        let lut = pair.provenance.lut.clone().unwrap();
        for (v, l) in pair.image.values().iter().zip(pair.labels.labels()) {
            assert_eq!(*v, lut.values()[*l as usize]);
        }
    }
}

#[test]
fn identity_chain_returns_the_mean_image() {
    let s = phantom(16);
    let mut cfg = small_config();
    identity_spatial(&mut cfg);
    cfg.spatial.cropping_pct = Range(0.0, 0.0);
    cfg.corruption.bias_drop_pct = Range(0.0, 0.0);
    cfg.corruption.blur_sd_mm = Range(0.0, 0.0);
    cfg.corruption.noise_sd_pct = Range(0.0, 0.0);
    cfg.corruption.gamma = Range(1.0, 1.0);
    cfg.corruption.downsample_factor = Range(1.0, 1.0);
    cfg.corruption.clear_slice_count = IntRange(0, 0);
    cfg.corruption.brain_labels = Some(vec![0, 1, 2]);
    cfg.probability = StageProbabilities::always();
    // Gamma renormalizes to [0, 1]; a table spanning [0, 1] makes that a no-op.
    cfg.intensity.lut.background = Some(0.0);
    cfg.intensity.lut.ranges = vec![LabelRange { label: 2, range: (1.0, 1.0) }];
    for seed in 0..5u64 {
        let pair = generate(&s, &cfg, seed).unwrap();
        assert_eq!(pair.labels, s);
        let mean = render_mean_image(&s, pair.provenance.lut.as_ref().unwrap()).unwrap();
        for (a, b) in pair.image.values().iter().zip(mean.values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    // With an arbitrary table the chain is the renormalized mean image.
    cfg.intensity.lut = Default::default();
    let pair = generate(&s, &cfg, 7).unwrap();
    let mean = minmax_normalize(&render_mean_image(&s, pair.provenance.lut.as_ref().unwrap()).unwrap()).field;
    for (a, b) in pair.image.values().iter().zip(mean.values()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn gate_rates_match_their_probabilities() {
    let s = phantom(8);
    let mut cfg = SynthesisConfig::default();
    identity_spatial(&mut cfg);
    cfg.corruption.brain_labels = Some(vec![1, 2]);
    cfg.probability = StageProbabilities {
        bias: 0.9,
        blur: 0.5,
        noise: 0.2,
        gamma: 0.7,
        downsample: 0.5,
        crop: 0.35,
        clear_slices: 0.05,
        skullstrip: 0.5,
    };
    let n = 10_000u64;
    let mut counts = [0u64; 8];
    for seed in 0..n {
        let g = generate_until(&s, &cfg, seed, Stage::Spatial).unwrap().provenance.gates;
        let flags = [g.bias, g.blur, g.noise, g.gamma, g.downsample, g.crop, g.clear_slices, g.skullstrip];
        for (c, f) in counts.iter_mut().zip(flags) {
            *c += u64::from(f);
        }
    }
    let p = [0.9, 0.5, 0.2, 0.7, 0.5, 0.35, 0.05, 0.5];
    for (k, (&c, &p)) in counts.iter().zip(&p).enumerate() {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let rate = c as f64 / n as f64;
        assert!((rate - p).abs() <= 3.0 * se, "gate {k}: {rate} vs {p}");
    }
}

#[test]
fn cutoff_records_only_stages_that_ran() {
    let s = phantom(16);
    let mut cfg = small_config();
    cfg.probability = StageProbabilities::always();
    let full = generate(&s, &cfg, 4).unwrap();
    for stage in Stage::ALL {
        let pair = generate_until(&s, &cfg, 4, stage).unwrap();
        let p = &pair.provenance;
        assert_eq!(p.cutoff, stage);
        assert_eq!(p.affine, full.provenance.affine);
        assert_eq!(p.lut.is_some(), stage >= Stage::MeanImage);
        assert_eq!(p.bias.is_some(), stage >= Stage::Bias);
        assert_eq!(p.blur.is_some(), stage >= Stage::Blur);
        assert_eq!(p.noise.is_some(), stage >= Stage::Noise);
        assert_eq!(p.gamma.is_some(), stage >= Stage::Gamma);
        assert_eq!(p.downsample.is_some(), stage >= Stage::Downsample);
        assert_eq!(p.clear_slices.is_some(), stage >= Stage::ClearSlices);
        assert_eq!(p.skullstrip.is_some(), stage >= Stage::Skullstrip);
        if stage >= Stage::MeanImage {
            assert_eq!(p.lut, full.provenance.lut);
        }
    }
    assert_eq!(generate_until(&s, &cfg, 4, Stage::last()).unwrap(), full);
}

#[test]
fn two_dimensional_maps_are_supported() {
    let shape = Shape::new(&[40, 32]).unwrap();
    let labels = (0..shape.len()).map(|i| u32::from((i / 32).abs_diff(20) < 8)).collect();
    let s = LabelVolume::new(Grid::unit(shape), labels, 2).unwrap();
    let mut cfg = small_config();
    cfg.corruption.brain_labels = None;
    cfg.probability = StageProbabilities::always();
    let pair = generate(&s, &cfg, 3).unwrap();
    assert_eq!(pair.image.shape(), s.shape());
    assert!(pair.image.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_keep_shape_ids_and_finiteness(seed in 0u64..1_000_000, always in any::<bool>()) {
        let s = phantom(12);
        let mut cfg = small_config();
        if always {
            cfg.probability = StageProbabilities::always();
        }
        let pair = generate(&s, &cfg, seed).unwrap();
        prop_assert_eq!(pair.image.shape(), s.shape());
        prop_assert_eq!(pair.labels.shape(), s.shape());
        prop_assert!(pair.image.is_finite());
        prop_assert!(pair.labels.labels().iter().all(|&l| l < 3));
    }
}

