//! Numerical checks of the logistic-GLM mixup analysis: the second-order
//! regularizer approximation of the weighted mixup loss and the numerical
//! rank of the group-weighted feature second moment.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{sample_beta2, RngStream};

/// Which mixture component a λ draw came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixtureComponent {
    /// `Beta(α+1, β)`, chosen with probability `α/(α+β)`.
    First,
    /// `Beta(β+1, α)`, chosen with probability `β/(α+β)`.
    Second,
}

/// Draws from `α/(α+β)·Beta(α+1, β) + β/(α+β)·Beta(β+1, α)` and reports
/// the component used.
pub fn mixture_lambda_component<R: Rng + ?Sized>(
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<(f64, MixtureComponent)> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "mixture parameters must be positive, got ({alpha}, {beta})"
        )));
    }
    let u: f64 = rng.random();
    if u < alpha / (alpha + beta) {
        Ok((
            sample_beta2(alpha + 1.0, beta, rng)?,
            MixtureComponent::First,
        ))
    } else {
        Ok((
            sample_beta2(beta + 1.0, alpha, rng)?,
            MixtureComponent::Second,
        ))
    }
}

pub fn mixture_lambda_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    mixture_lambda_component(alpha, beta, rng).map(|(l, _)| l)
}

/// Logistic log-partition `A(z) = ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Outcome of comparing the Monte-Carlo weighted mixup loss with its
/// second-order approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerCheck {
    pub mc_mixup_loss: f64,
    /// Standard error of `mc_mixup_loss`.
    pub mc_std_error: f64,
    pub std_loss: f64,
    pub regularizer: f64,
    pub approx_rhs: f64,
    pub abs_gap: f64,
    /// `abs_gap / |approx_rhs|`.
    pub rel_gap: f64,
    /// Empirical `E[(1−λ)²/λ²]` over the same draws.
    pub ratio_moment: f64,
    pub mc_samples: usize,
    pub beta_params: (f64, f64),
    pub seed: u64,
}

const MC_CHUNK: usize = 4096;
const CENTER_TOL: f64 = 1e-9;

/// Subtracts the `weights`-weighted feature mean (weights taken relative to
/// their mean), producing data the regularizer check accepts.
pub fn center_weighted(data: &Dataset, weights: &[f64]) -> Result<Dataset> {
    let w = normalized(weights, data.len())?;
    let d = data.dim();
    let mut mean = vec![0.0; d];
    for (x, wi) in data.rows().zip(&w) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += wi * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= data.len() as f64);
    let features = data
        .rows()
        .flat_map(|x| x.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    data.with_features(d, features)
}

fn normalized(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be finite and positive"));
    }
    let mean = weights.iter().sum::<f64>() / n as f64;
    Ok(weights.iter().map(|w| w / mean).collect())
}

/// Compares `E_λ E_r[(1/n) Σ w_i ℓ(x_i + ((1−λ)/λ) r, y_i)]` for a binary
/// logistic GLM `θ` against
/// `L_std + (1/2n)[Σ w_i A″(x_iᵀθ)]·E[(1−λ)²/λ²]·θᵀΣ̂θ`, with
/// `λ ~ D̃_λ`, `r` drawn from the weighted empirical distribution and
/// `Σ̂ = (1/n) Σ w_i x_i x_iᵀ`. Weights are rescaled to mean 1.
///
/// The Monte-Carlo average uses the first- and second-order Taylor terms as
/// control variates; both have known conditional means given `λ`, so the
/// estimator stays unbiased.
pub fn check_mixup_regularizer(
    theta: &[f64],
    data: &Dataset,
    weights: &[f64],
    alpha: f64,
    beta: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<RegularizerCheck> {
    if data.num_classes() != 2 {
        return Err(Error::invalid(
            "the regularizer check needs a binary dataset",
        ));
    }
    if theta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: theta.len(),
        });
    }
    if !(alpha >= 2.0 && beta >= 2.0) {
        return Err(Error::invalid(format!(
            "E[(1-λ)²/λ²] diverges unless α, β ≥ 2; got ({alpha}, {beta})"
        )));
    }
    if mc_samples < 2 {
        return Err(Error::invalid("need at least 2 Monte-Carlo samples"));
    }
    let n = data.len();
    let w = normalized(weights, n)?;
    let mut mean = vec![0.0; data.dim()];
    for (x, wi) in data.rows().zip(&w) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += wi * v / n as f64;
        }
    }
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    if norm > CENTER_TOL {
        return Err(Error::invalid(format!(
            "data must be centered (weighted feature mean has norm {norm:e})"
        )));
    }

    let z: Vec<f64> = data.rows().map(|x| dot(theta, x)).collect();
    let y: Vec<f64> = data.labels().iter().map(|&l| l as f64).collect();
    let loss = |t: f64, yi: f64| softplus(t) - yi * t;
    let std_loss = (0..n).map(|i| w[i] * loss(z[i], y[i])).sum::<f64>() / n as f64;
    // first-order coefficient (1/n) Σ w_i (A'(z_i) − y_i) and curvature (1/n) Σ w_i A''(z_i)
    let g1 = (0..n).map(|i| w[i] * (sigmoid(z[i]) - y[i])).sum::<f64>() / n as f64;
    let curv = (0..n)
        .map(|i| {
            let s = sigmoid(z[i]);
            w[i] * s * (1.0 - s)
        })
        .sum::<f64>()
        / n as f64;
    // θᵀΣ̂θ = (1/n) Σ w_k (θᵀx_k)²
    let quad = (0..n).map(|k| w[k] * z[k] * z[k]).sum::<f64>() / n as f64;
    let cumulative: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, wk| {
            *acc += wk / n as f64;
            Some(*acc)
        })
        .collect();

    let stream = RngStream::new(seed);
    let chunks = mc_samples.div_ceil(MC_CHUNK);
    // per chunk: (Σ adjusted, Σ adjusted², Σ δ²)
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.derive(c as u64).named("regularizer-mc");
            let len = MC_CHUNK.min(mc_samples - c * MC_CHUNK);
            let (mut s1, mut s2, mut sd) = (0.0, 0.0, 0.0);
            for _ in 0..len {
                let lambda = mixture_lambda_sample(alpha, beta, &mut rng)?;
                let u: f64 = rng.random::<f64>() * cumulative[n - 1];
                let k = cumulative.partition_point(|&c| c <= u).min(n - 1);
                let delta = (1.0 - lambda) / lambda;
                let shift = delta * z[k];
                let lhs = (0..n).map(|i| w[i] * loss(z[i] + shift, y[i])).sum::<f64>() / n as f64;
                let adjusted = lhs - g1 * shift - 0.5 * curv * delta * delta * (z[k] * z[k] - quad);
                s1 += adjusted;
                s2 += adjusted * adjusted;
                sd += delta * delta;
            }
            Ok((s1, s2, sd))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s1, s2, sd) = partial
        .iter()
        .fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let m = mc_samples as f64;
    let mc_mixup_loss = s1 / m;
    let var = ((s2 - m * mc_mixup_loss * mc_mixup_loss) / (m - 1.0)).max(0.0);
    let ratio_moment = sd / m;
    let regularizer = 0.5 * curv * ratio_moment * quad;
    let approx_rhs = std_loss + regularizer;
    let abs_gap = (mc_mixup_loss - approx_rhs).abs();
    Ok(RegularizerCheck {
        mc_mixup_loss,
        mc_std_error: (var / m).sqrt(),
        std_loss,
        regularizer,
        approx_rhs,
        abs_gap,
        rel_gap: abs_gap / approx_rhs.abs(),
        ratio_moment,
        mc_samples,
        beta_params: (alpha, beta),
        seed,
    })
}

/// Random binary logistic-GLM problem: `x ~ N(0, I_d)` centered to zero
/// mean, `θ` uniform on the sphere of radius `theta_norm`, and
/// `y ~ Bernoulli(sigmoid(θᵀx))`.
pub fn random_glm_problem(
    dim: usize,
    samples: usize,
    theta_norm: f64,
    seed: u64,
) -> Result<(Vec<f64>, Dataset)> {
    if dim == 0 || samples < 2 {
        return Err(Error::invalid("need dim ≥ 1 and at least 2 samples"));
    }
    if !(theta_norm >= 0.0 && theta_norm.is_finite()) {
        return Err(Error::invalid(format!(
            "theta_norm must be nonnegative, got {theta_norm}"
        )));
    }
    let stream = RngStream::new(seed);
    let mut rng = stream.named("glm-problem");
    let mut normal =
        || -> f64 { rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng) };
    let mut theta: Vec<f64> = (0..dim).map(|_| normal()).collect();
    let len = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    theta.iter_mut().for_each(|t| *t *= theta_norm / len);
    let mut features: Vec<f64> = (0..dim * samples).map(|_| normal()).collect();
    for k in 0..dim {
        let mean = (0..samples).map(|i| features[i * dim + k]).sum::<f64>() / samples as f64;
        for i in 0..samples {
            features[i * dim + k] -= mean;
        }
    }
    let mut label_rng = stream.named("glm-labels");
    let labels = features
        .chunks(dim)
        .map(|x| usize::from(label_rng.random::<f64>() < sigmoid(dot(&theta, x))))
        .collect();
    let data = Dataset::new(
        "glm",
        crate::data::Split::Train,
        dim,
        features,
        labels,
        None,
        2,
        1,
    )?;
    Ok((theta, data))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigen-decomposition of the group-weighted second moment
/// `(1/n) Σ_i w_{g_i} x_i x_iᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
    pub eps: f64,
}

impl RankReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (k, e) in self.eigenvalues.iter().enumerate() {
            s.push_str(&format!("{k},{e:?}\n"));
        }
        s
    }
}

/// Numerical rank: eigenvalues above `eps · λ_max`.
pub fn covariance_rank(data: &Dataset, group_weights: &[f64], eps: f64) -> Result<RankReport> {
    let groups = data.require_groups("the covariance rank uses per-group weights")?;
    if group_weights.len() != data.num_groups() {
        return Err(Error::DimensionMismatch {
            expected: data.num_groups(),
            got: group_weights.len(),
        });
    }
    if group_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "group weights must be finite and nonnegative",
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let d = data.dim();
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for (x, &g) in data.rows().zip(groups) {
        let wg = group_weights[g];
        for a in 0..d {
            for b in 0..=a {
                sigma[(a, b)] += wg * x[a] * x[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            sigma[(b, a)] = sigma[(a, b)];
        }
    }
    sigma /= data.len().max(1) as f64;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sigma)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        eigenvalues.iter().filter(|&&e| e > eps * top).count()
    } else {
        0
    };
    Ok(RankReport {
        rank,
        eigenvalues,
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixture_mean_and_component_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        // component means (α+1)/(α+β+1) and (β+1)/(α+β+1); at α = β = 3 both are 4/7
        let mean = (0..n)
            .map(|_| mixture_lambda_sample(3.0, 3.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 4.0 / 7.0).abs() < 0.005, "{mean}");

        let second = (0..n)
            .filter(|_| {
                mixture_lambda_component(1.0, 3.0, &mut rng).unwrap().1 == MixtureComponent::Second
            })
            .count() as f64
            / n as f64;
        assert!((second - 0.75).abs() < 0.01, "{second}");

        for _ in 0..10_000 {
            let l = mixture_lambda_sample(2.0, 2.0, &mut rng).unwrap();
            assert!(l > 0.0 && l < 1.0);
        }
        assert!(mixture_lambda_sample(0.0, 1.0, &mut rng).is_err());
    }

    fn binary(features: Vec<f64>, labels: Vec<usize>, d: usize) -> Dataset {
        Dataset::new("b", Split::Train, d, features, labels, None, 2, 1).unwrap()
    }

    #[test]
    fn zero_theta_has_no_gap() {
        let d = binary(vec![1.0, -1.0, 2.0, -2.0], vec![0, 1, 1, 0], 1);
        let r = check_mixup_regularizer(&[0.0], &d, &[1.0; 4], 4.0, 4.0, 5000, 3).unwrap();
        assert_eq!(r.regularizer, 0.0);
        assert!((r.std_loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(r.abs_gap < 1e-12, "{}", r.abs_gap);
    }

    #[test]
    fn rejects_uncentered_and_heavy_tailed() {
        let d = binary(vec![1.0, 2.0], vec![0, 1], 1);
        assert!(check_mixup_regularizer(&[0.1], &d, &[1.0; 2], 4.0, 4.0, 100, 0).is_err());
        let c = center_weighted(&d, &[1.0; 2]).unwrap();
        assert!(check_mixup_regularizer(&[0.1], &c, &[1.0; 2], 4.0, 4.0, 100, 0).is_ok());
        assert!(check_mixup_regularizer(&[0.1], &c, &[1.0; 2], 1.5, 4.0, 100, 0).is_err());
    }

    #[test]
    fn rank_of_planar_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (300, 10);
        let mut f = Vec::with_capacity(n * d);
        for _ in 0..n {
            let (a, b): (f64, f64) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            for k in 0..d {
                // every row lies in span{(1,…,1), (1,−1,1,…)}
                f.push(a + if k % 2 == 0 { b } else { -b });
            }
        }
        let data =
            Dataset::new("p", Split::Train, d, f, vec![0; n], Some(vec![0; n]), 1, 1).unwrap();
        assert_eq!(covariance_rank(&data, &[1.0], 1e-9).unwrap().rank, 2);

        let mut g = Vec::with_capacity(n * (d + 1));
        for x in data.rows() {
            g.extend_from_slice(x);
            g.push(0.0);
        }
        let padded = data.with_features(d + 1, g).unwrap();
        assert_eq!(covariance_rank(&padded, &[1.0], 1e-9).unwrap().rank, 2);
    }
}
