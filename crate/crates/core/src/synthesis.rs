//! Mean-image rendering: every label receives one random intensity and the
//! label map is used as an index into that lookup table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{LabelVolume, ScalarField};
use crate::rng::RngStream;

/// Intensity `μ_j ∈ [0, 1]` for each label `j`, indexed densely by label id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntensityLut {
    values: Vec<f32>,
}

impl IntensityLut {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Range(format!("a lookup table needs at least 2 entries, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("intensity {v} is outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, label: u32) -> Option<f32> {
        self.values.get(label as usize).copied()
    }
}

/// Restricts the uniform draw of one label to `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRange {
    pub label: u32,
    pub range: (f64, f64),
}

/// Optional structure imposed on the lookup table. All off by default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LutConstraints {
    /// Fixed intensity for label 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    /// Groups of labels that share one intensity (for example left/right
    /// pairs). The first label of each group supplies the value.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ties: Vec<Vec<u32>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ranges: Vec<LabelRange>,
}

impl LutConstraints {
    pub fn is_empty(&self) -> bool {
        self.background.is_none() && self.ties.is_empty() && self.ranges.is_empty()
    }

    /// Check the constraints against a table of `count` labels.
    pub fn check(&self, count: u32) -> Result<()> {
        let referenced = self
            .ties
            .iter()
            .flatten()
            .copied()
            .chain(self.ranges.iter().map(|r| r.label));
        for label in referenced {
            if label >= count {
                return Err(Error::LabelOutOfRange {
                    label,
                    count: count as usize,
                });
            }
        }
        if let Some(b) = self.background {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Range(format!("background intensity {b} is outside [0, 1]")));
            }
        }
        for r in &self.ranges {
            let (lo, hi) = r.range;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Range(format!("intensity range [{lo}, {hi}] for label {} must lie in [0, 1]", r.label)));
            }
        }
        Ok(())
    }
}

/// Draw `μ_j ~ U(0, 1)` for `j = 0..J`, then apply the constraints. One
/// uniform is always drawn per label, so enabling a constraint never shifts
/// the draws of other labels.
pub fn sample_lut(count: u32, rng: RngStream, constraints: &LutConstraints) -> Result<IntensityLut> {
    sample_lut_in(count, (0.0, 1.0), rng, constraints)
}

/// As [`sample_lut`], with unconstrained entries drawn from `U(a, b)`.
pub fn sample_lut_in(count: u32, (a, b): (f64, f64), rng: RngStream, constraints: &LutConstraints) -> Result<IntensityLut> {
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(Error::Range(format!("intensity range [{a}, {b}] must be an ordered sub-range of [0, 1]")));
    }
    if count < 2 {
        return Err(Error::Range(format!("a lookup table needs J ≥ 2 labels, got {count}")));
    }
    constraints.check(count)?;
    let mut d = rng.draws();
    let u: Vec<f64> = (0..count).map(|_| d.uniform(0.0, 1.0)).collect();
    let mut values: Vec<f64> = u.iter().map(|&u| if a == b { a } else { a + (b - a) * u }).collect();
    for r in &constraints.ranges {
        let (lo, hi) = r.range;
        values[r.label as usize] = lo + (hi - lo) * u[r.label as usize];
    }
    for group in &constraints.ties {
        if let Some(&first) = group.first() {
            let v = values[first as usize];
            for &l in group {
                values[l as usize] = v;
            }
        }
    }
    if let Some(b) = constraints.background {
        values[0] = b;
    }
    IntensityLut::new(values.into_iter().map(|v| v as f32).collect())
}

/// `x_μ(M) = μ(s_x(M))`.
pub fn render_mean_image(labels: &LabelVolume, lut: &IntensityLut) -> Result<ScalarField> {
    let table = lut.values();
    if let Some(&label) = labels.labels().par_iter().find_any(|&&l| l as usize >= table.len()) {
        return Err(Error::LabelOutOfRange {
            label,
            count: table.len(),
        });
    }
    let values = labels.labels().par_iter().map(|&l| table[l as usize]).collect();
    ScalarField::new(labels.grid().clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Grid, Shape};

    fn volume(extents: &[usize], labels: Vec<u32>, count: u32) -> LabelVolume {
        LabelVolume::new(Grid::unit(Shape::new(extents).unwrap()), labels, count).unwrap()
    }

    #[test]
    fn forced_background() {
        let c = LutConstraints {
            background: Some(0.0),
            ..Default::default()
        };
        let lut = sample_lut(2, RngStream::new(1, 4), &c).unwrap();
        assert_eq!(lut.values()[0], 0.0);
        assert!((0.0..=1.0).contains(&lut.values()[1]));
    }

    #[test]
    fn tied_labels_share_a_value() {
        let c = LutConstraints {
            ties: vec![vec![1, 2]],
            ..Default::default()
        };
        for seed in 0..10 {
            let lut = sample_lut(4, RngStream::new(seed, 4), &c).unwrap();
            assert_eq!(lut.values()[1], lut.values()[2]);
        }
    }

    #[test]
    fn constraints_on_missing_labels_fail() {
        let c = LutConstraints {
            ties: vec![vec![1, 5]],
            ..Default::default()
        };
        assert!(matches!(
            sample_lut(4, RngStream::new(0, 0), &c),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
        assert!(sample_lut(1, RngStream::new(0, 0), &LutConstraints::default()).is_err());
    }

    #[test]
    fn range_constraint_confines_draw() {
        let c = LutConstraints {
            ranges: vec![LabelRange {
                label: 3,
                range: (0.4, 0.5),
            }],
            ..Default::default()
        };
        for seed in 0..50 {
            let v = sample_lut(5, RngStream::new(seed, 4), &c).unwrap().values()[3];
            assert!((0.4..=0.5).contains(&(v as f64)), "{v}");
        }
    }

    #[test]
    fn single_label_volume_is_constant() {
        let s = volume(&[3, 3], vec![0; 9], 2);
        let lut = IntensityLut::new(vec![0.3, 0.7]).unwrap();
        let x = render_mean_image(&s, &lut).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn half_and_half_gives_two_values() {
        let s = volume(&[2, 2], vec![0, 0, 1, 1], 2);
        let lut = IntensityLut::new(vec![0.2, 0.9]).unwrap();
        let x = render_mean_image(&s, &lut).unwrap();
        assert_eq!(x.values(), &[0.2, 0.2, 0.9, 0.9]);
    }

    #[test]
    fn label_beyond_table_is_rejected() {
        let s = volume(&[2, 2], vec![0, 1, 2, 3], 4);
        let lut = IntensityLut::new(vec![0.2, 0.9]).unwrap();
        assert!(matches!(
            render_mean_image(&s, &lut),
            Err(Error::LabelOutOfRange { label: 2, count: 2 }) | Err(Error::LabelOutOfRange { label: 3, count: 2 })
        ));
    }
}
