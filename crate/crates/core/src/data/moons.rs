use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{RngStream, Substream};

/// Class label of each four-moons group: groups 0 and 2 share label 0,
/// groups 1 and 3 share label 1.
pub const FOUR_MOONS_LABELS: [usize; 4] = [0, 1, 0, 1];

/// Translation applied to the second copy of the two-moons pair.
const SECOND_PAIR_OFFSET: (f64, f64) = (2.5, -2.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourMoonsSpec {
    #[serde(default = "default_sizes")]
    pub samples_per_group: [usize; 4],
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sizes() -> [usize; 4] {
    [1000, 1000, 50, 50]
}

fn default_noise() -> f64 {
    0.1
}

impl Default for FourMoonsSpec {
    fn default() -> Self {
        Self {
            samples_per_group: default_sizes(),
            noise_std: default_noise(),
            seed: 0,
        }
    }
}

/// Noiseless point of group `group`'s arc at angle `t ∈ [0, π]`.
///
/// Groups 0/1 are the classic interleaved upper and lower half-moons;
/// groups 2/3 are the same arcs translated, so each class owns two
/// clusters.
pub fn moon_arc(group: usize, t: f64) -> (f64, f64) {
    let (cx, cy, sign) = arc_frame(group);
    (cx + sign * t.cos(), cy + sign * t.sin())
}

/// Center and orientation (`+1` upper arc, `−1` lower arc) of a group.
pub(crate) fn arc_frame(group: usize) -> (f64, f64, f64) {
    let (ox, oy) = if group >= 2 {
        SECOND_PAIR_OFFSET
    } else {
        (0.0, 0.0)
    };
    if group.is_multiple_of(2) {
        (ox, oy, 1.0)
    } else {
        (1.0 + ox, 0.5 + oy, -1.0)
    }
}

pub fn generate_four_moons(spec: &FourMoonsSpec) -> Result<Dataset> {
    if spec.samples_per_group.contains(&0) {
        return Err(Error::invalid(
            "every four-moons group needs at least one sample",
        ));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be nonnegative"));
    }
    let stream = RngStream::new(spec.seed);
    let mut rng = stream.named("four-moons");
    let mut noise_rng = stream.substream(Substream::Noise);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;

    let n: usize = spec.samples_per_group.iter().sum();
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, &count) in spec.samples_per_group.iter().enumerate() {
        for _ in 0..count {
            let t = rng.random_range(0.0..=std::f64::consts::PI);
            let (x, y) = moon_arc(g, t);
            let (ex, ey) = if spec.noise_std > 0.0 {
                (noise.sample(&mut noise_rng), noise.sample(&mut noise_rng))
            } else {
                (0.0, 0.0)
            };
            features.extend_from_slice(&[x + ex, y + ey]);
            labels.push(FOUR_MOONS_LABELS[g]);
            groups.push(g);
        }
    }
    Dataset::new(
        "four_moons",
        Split::Train,
        2,
        features,
        labels,
        Some(groups),
        2,
        4,
    )
}
