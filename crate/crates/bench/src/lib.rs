//! Fixtures shared by the benchmarks.

use labelsynth::{Grid, LabelVolume, Shape};

/// Cube of extent `n` holding a centred sphere (label 1) inside a larger
/// shell (label 2) on background.
pub fn sphere_phantom(n: usize) -> LabelVolume {
    let shape = Shape::new(&[n, n, n]).expect("valid extent");
    let c = (n as f64 - 1.0) / 2.0;
    let (inner, outer) = ((n as f64 * 0.2).powi(2), (n as f64 * 0.35).powi(2));
    let labels = (0..shape.len())
        .map(|i| {
            let d2: f64 = shape.unravel(i).iter().map(|&k| (k as f64 - c).powi(2)).sum();
            if d2 <= inner {
                1
            } else if d2 <= outer {
                2
            } else {
                0
            }
        })
        .collect();
    LabelVolume::new(Grid::unit(shape), labels, 3).expect("labels within range")
}
