use labelsynth::fields::{gaussian_kernel, resample_linear, separable_convolve, Kernel1D};
use labelsynth::{Grid, RngStream, ScalarField, Shape};
use proptest::prelude::*;

/// Direct N-D convolution with the outer-product kernel and replicated edges.
fn dense_convolve(f: &ScalarField, kernels: &[Kernel1D]) -> Vec<f64> {
    let shape = f.shape();
    let n = shape.ndim();
    let lens: Vec<usize> = kernels.iter().map(Kernel1D::len).collect();
    let taps: usize = lens.iter().product();
    (0..shape.len())
        .map(|lin| {
            let p = shape.unravel(lin);
            let mut acc = 0.0;
            for t in 0..taps {
                let (mut rem, mut w, mut q) = (t, 1.0, vec![0usize; n]);
                for a in (0..n).rev() {
                    let j = rem % lens[a];
                    rem /= lens[a];
                    w *= kernels[a].taps()[j];
                    let k = p[a] as isize - (j as isize - kernels[a].radius() as isize);
                    q[a] = k.clamp(0, shape.extent(a) as isize - 1) as usize;
                }
                acc += w * f.get(&q) as f64;
            }
            acc
        })
        .collect()
}

fn random_field(extents: &[usize], seed: u64) -> ScalarField {
    let shape = Shape::new(extents).unwrap();
    let mut v = vec![0.0f32; shape.len()];
    RngStream::new(seed, 0).fill_normal(&mut v, 1.0);
    ScalarField::new(Grid::unit(shape), v).unwrap()
}

fn random_case(seed: u64) -> (ScalarField, Vec<Kernel1D>) {
    let mut d = RngStream::new(seed, 1).draws();
    let ndim = if d.bernoulli(0.5) { 3 } else { 2 };
    let extents: Vec<usize> = (0..ndim).map(|_| d.uniform_int(1, 16) as usize).collect();
    let kernels = extents
        .iter()
        .map(|&e| {
            // round(3σ) ≤ extent − 1 keeps the kernel admissible.
            let max_sigma = ((e - 1) as f64 / 3.0).min(1.2);
            Kernel1D::gaussian_voxels(d.uniform(0.0, max_sigma)).unwrap()
        })
        .collect();
    (random_field(&extents, seed), kernels)
}

#[test]
fn separable_matches_dense_oracle_on_random_fields() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (f, kernels) = random_case(seed);
        let fast = separable_convolve(&f, &kernels).unwrap();
        let slow = dense_convolve(&f, &kernels);
        for (a, b) in fast.values().iter().zip(&slow) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    assert!(worst < 1e-5, "max abs error {worst}");
}

#[test]
fn kernel_sums_to_one_for_many_widths() {
    for i in 0..60 {
        let k = gaussian_kernel(0.1 * i as f64, 1.0).unwrap();
        let s: f64 = k.taps().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(k.len() % 2, 1);
    }
}

#[test]
fn anisotropic_voxels_shorten_the_kernel_in_mm() {
    assert_eq!(gaussian_kernel(2.0, 1.0).unwrap().len(), 13);
    assert_eq!(gaussian_kernel(2.0, 2.0).unwrap().len(), 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_preserves_constants(
        extents in prop::collection::vec(1usize..9, 2..=3),
        value in -5.0f32..5.0,
        sigma in 0.0f64..1.0,
    ) {
        let shape = Shape::new(&extents).unwrap();
        let f = ScalarField::filled(Grid::unit(shape), value);
        let kernels: Vec<_> = extents
            .iter()
            .map(|&e| Kernel1D::gaussian_voxels(sigma.min((e - 1) as f64 / 3.0)).unwrap())
            .collect();
        let g = separable_convolve(&f, &kernels).unwrap();
        for v in g.values() {
            prop_assert!((v - value).abs() <= 1e-5 * value.abs().max(1.0));
        }
    }

    #[test]
    fn convolution_is_linear(seed in 0u64..1000, alpha in -3.0f32..3.0) {
        let (f, kernels) = random_case(seed);
        let g = random_field(f.shape().extents(), seed + 7);
        let sum = ScalarField::new(
            f.grid().clone(),
            f.values().iter().zip(g.values()).map(|(a, b)| alpha * a + b).collect(),
        ).unwrap();
        let lhs = separable_convolve(&sum, &kernels).unwrap();
        let cf = separable_convolve(&f, &kernels).unwrap();
        let cg = separable_convolve(&g, &kernels).unwrap();
        for ((l, a), b) in lhs.values().iter().zip(cf.values()).zip(cg.values()) {
            prop_assert!((l - (alpha * a + b)).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_resampling_keeps_corners(
        from in prop::collection::vec(2usize..9, 3),
        to in prop::collection::vec(2usize..13, 3),
        seed in 0u64..1000,
    ) {
        let f = random_field(&from, seed);
        let g = resample_linear(&f, &Shape::new(&to).unwrap()).unwrap();
        for corner in 0..8usize {
            let pick = |ext: &[usize]| -> Vec<usize> {
                (0..3).map(|a| if corner >> a & 1 == 1 { ext[a] - 1 } else { 0 }).collect()
            };
            prop_assert_eq!(g.get(&pick(&to)), f.get(&pick(&from)));
        }
        let (lo, hi) = f.min_max();
        let (glo, ghi) = g.min_max();
        prop_assert!(glo >= lo - 1e-6 && ghi <= hi + 1e-6);
    }
}
