//! Datasets drawn from a mixture of labelled subpopulations.

mod csv_io;
mod moons;
mod spurious;

pub use csv_io::{load_csv, save_csv, CsvSchema, GroupColumn};
pub use moons::{generate_four_moons, moon_arc, FourMoonsSpec, FOUR_MOONS_LABELS};
pub use spurious::{generate_spurious, SpuriousSpec, SpuriousSplits};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Feature matrix, class labels and optional subpopulation labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    split: Split,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    num_classes: usize,
    num_groups: usize,
}

impl Dataset {
    /// `features` is row-major `n × dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        split: Split,
        dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        num_classes: usize,
        num_groups: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim.max(1),
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g.len(),
                });
            }
            if let Some(&bad) = g.iter().find(|&&v| v >= num_groups) {
                return Err(Error::invalid(format!(
                    "group {bad} out of range for {num_groups} groups"
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            name: name.into(),
            split,
            dim,
            features,
            labels,
            num_groups: if groups.is_some() { num_groups } else { 0 },
            groups,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of declared groups, `0` when the dataset is group-free.
    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn require_groups(&self, why: &str) -> Result<&[usize]> {
        self.groups
            .as_deref()
            .ok_or_else(|| Error::MissingGroups(why.to_string()))
    }

    pub fn group_counts(&self) -> Option<Vec<usize>> {
        let g = self.groups.as_ref()?;
        let mut counts = vec![0; self.num_groups];
        for &v in g {
            counts[v] += 1;
        }
        Some(counts)
    }

    /// Same rows with every group label dropped.
    pub fn without_groups(&self) -> Self {
        Self {
            groups: None,
            num_groups: 0,
            ..self.clone()
        }
    }

    /// Same labels and groups with features replaced.
    pub fn with_features(&self, dim: usize, features: Vec<f64>) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.split,
            dim,
            features,
            self.labels.clone(),
            self.groups.clone(),
            self.num_classes,
            self.num_groups.max(1),
        )
    }

    pub fn with_groups(&self, groups: Vec<usize>, num_groups: usize) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.split,
            self.dim,
            self.features.clone(),
            self.labels.clone(),
            Some(groups),
            self.num_classes,
            num_groups,
        )
    }

    /// Column means.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Short content hash binding derived artifacts (traces, weights) to
    /// the exact rows they were computed from.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        if let Some(g) = &self.groups {
            for &v in g {
                h.update((v as u64).to_le_bytes());
            }
        }
        h.finalize()[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            "t",
            Split::Train,
            2,
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0, 1],
            Some(vec![1, 0]),
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(Dataset::new("t", Split::Train, 2, vec![0.0; 3], vec![0, 1], None, 2, 0).is_err());
        assert!(Dataset::new("t", Split::Train, 1, vec![0.0; 2], vec![0, 2], None, 2, 0).is_err());
        assert!(Dataset::new(
            "t",
            Split::Train,
            1,
            vec![0.0; 2],
            vec![0, 1],
            Some(vec![0, 3]),
            2,
            2
        )
        .is_err());
        assert!(Dataset::new(
            "t",
            Split::Train,
            1,
            vec![0.0, f64::NAN],
            vec![0, 1],
            None,
            2,
            0
        )
        .is_err());
    }

    #[test]
    fn accessors_and_fingerprint() {
        let d = tiny();
        assert_eq!(d.row(1), &[2.0, 3.0]);
        assert_eq!(d.group_counts(), Some(vec![1, 1]));
        assert_eq!(d.feature_mean(), vec![1.0, 2.0]);
        assert_eq!(d.fingerprint(), tiny().fingerprint());
        assert_ne!(d.fingerprint(), d.without_groups().fingerprint());
        assert_eq!(d.fingerprint().len(), 32);
    }
}
