//! Seeded random streams.
//!
//! Every source of randomness in a run is a named substream derived from a
//! single 64-bit seed. Two streams with the same seed and name produce the
//! same draws, and drawing from one substream never perturbs another, so
//! e.g. enabling mixup does not change the minibatch order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// The generator behind every substream.
pub type StreamRng = ChaCha8Rng;

/// Well-known substream names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Substream {
    DataShuffle,
    MixupLambda,
    MixupPairing,
    Init,
    Noise,
}

impl Substream {
    pub fn name(self) -> &'static str {
        match self {
            Substream::DataShuffle => "data-shuffle",
            Substream::MixupLambda => "mixup-lambda",
            Substream::MixupPairing => "mixup-pairing",
            Substream::Init => "init",
            Substream::Noise => "noise",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, which: Substream) -> StreamRng {
        self.named(which.name())
    }

    /// Substream keyed by an arbitrary name.
    pub fn named(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(splitmix64(self.seed ^ fnv1a(name.as_bytes())))
    }

    /// Child stream for the `index`-th repetition of some experiment.
    pub fn derive(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(
            self.seed ^ splitmix64(index.wrapping_add(0x5eed)),
        ))
    }
}

/// Combine a master seed with a per-run seed value.
pub fn derive_seed(master: u64, seed: u64) -> u64 {
    RngStream::new(master).derive(seed).seed()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw `λ ~ Beta(alpha, alpha)`.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    sample_beta2(alpha, alpha, rng)
}

/// Draw from `Beta(a, b)` as `G₁ / (G₁ + G₂)` with `Gᵢ` unit-scale gamma
/// variates (Marsaglia–Tsang).
pub fn sample_beta2<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!(
            "beta parameters must be positive and finite, got ({a}, {b})"
        )));
    }
    let ga = Gamma::new(a, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let gb = Gamma::new(b, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let x = ga.sample(rng);
    let y = gb.sample(rng);
    let s = x + y;
    if s > 0.0 {
        Ok(x / s)
    } else {
        // both variates underflowed (tiny shapes): the limit is a coin flip
        // between the endpoints, weighted by the shape parameters
        Ok(if rng.random::<f64>() < a / (a + b) {
            1.0
        } else {
            0.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed).substream(Substream::MixupLambda);
        (0..n)
            .map(|_| sample_beta(alpha, &mut rng).unwrap())
            .collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let s = RngStream::new(42);
        let take = |sub| {
            let mut r = s.substream(sub);
            (0..4).map(|_| r.random::<u64>()).collect::<Vec<_>>()
        };
        let (a, b, c) = (
            take(Substream::Init),
            take(Substream::Init),
            take(Substream::Noise),
        );
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(s.derive(0), s.derive(1));
    }

    #[test]
    fn beta_is_symmetric_about_half() {
        for alpha in [0.2, 0.5, 1.5, 4.0] {
            let m = mean(&draws(alpha, 100_000, 3));
            assert!((m - 0.5).abs() < 0.005, "alpha {alpha}: mean {m}");
        }
    }

    #[test]
    fn beta_one_is_uniform() {
        let mut v = draws(1.0, 100_000, 11);
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn beta_half_variance() {
        // Var Beta(a, a) = 1 / (4 (2a + 1)) = 0.125 at a = 0.5
        let v = draws(0.5, 100_000, 5);
        let m = mean(&v);
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var - 0.125).abs() < 0.005, "variance {var}");
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn beta_rejects_nonpositive_alpha() {
        let mut rng = RngStream::new(0).substream(Substream::MixupLambda);
        assert!(sample_beta(0.0, &mut rng).is_err());
        assert!(sample_beta(-1.0, &mut rng).is_err());
        assert!(sample_beta(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn beta_is_deterministic_per_stream() {
        assert_eq!(draws(0.5, 100, 9), draws(0.5, 100, 9));
    }
}
