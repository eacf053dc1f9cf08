//! Two-attribute toy with a shortcut feature.
//!
//! Each sample has a class label `y` and a nuisance attribute `a`, giving
//! four groups `g = 2y + a`. Coordinate 0 carries the label, coordinate 1
//! carries the attribute, and the remaining coordinates are pure noise. In
//! training, `a = y` for all but a `minority_fraction` of the samples, so the
//! attribute is a shortcut that breaks on the minority groups 1 and 2.
//! Validation and test splits are group-balanced.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpuriousSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Fraction of training samples, over both minority groups together,
    /// whose attribute disagrees with the label.
    pub minority_fraction: f64,
    pub core_separation: f64,
    pub spurious_separation: f64,
    pub noise_std: f64,
    pub noise_dims: usize,
    pub seed: u64,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_val: 1000,
            n_test: 4000,
            minority_fraction: 0.01,
            core_separation: 3.0,
            spurious_separation: 8.0,
            noise_std: 1.0,
            noise_dims: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Label and attribute of group `g`.
pub(crate) fn group_attributes(g: usize) -> (usize, usize) {
    (g / 2, g % 2)
}

fn train_counts(n: usize, minority_fraction: f64) -> [usize; 4] {
    let minority = (n as f64 * minority_fraction / 2.0).round() as usize;
    let majority = n - 2 * minority;
    [majority - majority / 2, minority, minority, majority / 2]
}

fn balanced_counts(n: usize) -> [usize; 4] {
    let mut c = [n / 4; 4];
    for slot in c.iter_mut().take(n % 4) {
        *slot += 1;
    }
    c
}

impl SpuriousSpec {
    fn validate(&self) -> Result<()> {
        if !(self.minority_fraction > 0.0 && self.minority_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "minority_fraction must lie in (0, 0.5), got {}",
                self.minority_fraction
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::invalid("split sizes must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if !(self.core_separation >= 0.0 && self.spurious_separation >= 0.0) {
            return Err(Error::invalid("separations must be nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 + self.noise_dims
    }
}

fn draw_split(
    spec: &SpuriousSpec,
    split: Split,
    counts: [usize; 4],
    rng: &mut impl Rng,
) -> Result<Dataset> {
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let d = spec.dim();
    let n: usize = counts.iter().sum();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, &count) in counts.iter().enumerate() {
        let (y, a) = group_attributes(g);
        let core = (2.0 * y as f64 - 1.0) * spec.core_separation / 2.0;
        let shortcut = (2.0 * a as f64 - 1.0) * spec.spurious_separation / 2.0;
        for _ in 0..count {
            features.push(core + noise.sample(rng));
            features.push(shortcut + noise.sample(rng));
            features.extend((0..spec.noise_dims).map(|_| noise.sample(rng)));
            labels.push(y);
            groups.push(g);
        }
    }
    Dataset::new("spurious", split, d, features, labels, Some(groups), 2, 4)
}

pub fn generate_spurious(spec: &SpuriousSpec) -> Result<SpuriousSplits> {
    spec.validate()?;
    let stream = RngStream::new(spec.seed);
    Ok(SpuriousSplits {
        train: draw_split(
            spec,
            Split::Train,
            train_counts(spec.n_train, spec.minority_fraction),
            &mut stream.named("spurious-train"),
        )?,
        val: draw_split(
            spec,
            Split::Val,
            balanced_counts(spec.n_val),
            &mut stream.named("spurious-val"),
        )?,
        test: draw_split(
            spec,
            Split::Test,
            balanced_counts(spec.n_test),
            &mut stream.named("spurious-test"),
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions() {
        let s = generate_spurious(&SpuriousSpec::default()).unwrap();
        assert_eq!(s.train.group_counts().unwrap(), vec![1980, 20, 20, 1980]);
        assert_eq!(s.test.group_counts().unwrap(), vec![1000; 4]);
        assert_eq!(s.val.group_counts().unwrap(), vec![250; 4]);
        assert_eq!(s.train.dim(), 10);
        for split in [&s.train, &s.val, &s.test] {
            let total: usize = split.group_counts().unwrap().iter().sum();
            assert_eq!(total, split.len());
        }
    }

    #[test]
    fn majority_groups_align_label_and_attribute() {
        let s = generate_spurious(&SpuriousSpec::default()).unwrap();
        for (i, &g) in s.train.groups().unwrap().iter().enumerate() {
            let (y, a) = group_attributes(g);
            assert_eq!(s.train.label(i), y);
            assert_eq!(y == a, g == 0 || g == 3);
        }
    }

    #[test]
    fn no_shortcut_means_identical_groups() {
        // with zero attribute separation, groups sharing a label differ
        // only by noise: compare their means coordinate-wise
        let spec = SpuriousSpec {
            spurious_separation: 0.0,
            n_train: 8000,
            minority_fraction: 0.4,
            ..Default::default()
        };
        let s = generate_spurious(&spec).unwrap();
        let d = s.train.dim();
        let groups = s.train.groups().unwrap();
        for (ga, gb) in [(0, 1), (2, 3)] {
            for k in 0..d {
                let pick = |g: usize| -> Vec<f64> {
                    s.train
                        .rows()
                        .zip(groups)
                        .filter(|(_, &h)| h == g)
                        .map(|(r, _)| r[k])
                        .collect()
                };
                let (a, b) = (pick(ga), pick(gb));
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let se = (spec.noise_std.powi(2) / a.len() as f64
                    + spec.noise_std.powi(2) / b.len() as f64)
                    .sqrt();
                assert!(
                    (mean(&a) - mean(&b)).abs() < 3.0 * se,
                    "groups {ga}/{gb} coord {k}"
                );
            }
        }
    }

    #[test]
    fn invalid_fraction() {
        for m in [0.0, 0.5, 0.7] {
            let spec = SpuriousSpec {
                minority_fraction: m,
                ..Default::default()
            };
            assert!(generate_spurious(&spec).is_err());
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_spurious(&SpuriousSpec::default()).unwrap();
        let b = generate_spurious(&SpuriousSpec::default()).unwrap();
        assert_eq!(a, b);
    }
}
