//! Per-minibatch objectives.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::LossTerm;
use crate::loss::{cross_entropy, softmax};
use crate::rng::{sample_beta, RngStream, StreamRng, Substream};

/// One forward input of a minibatch and the loss terms scored on it.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    /// Training index the input came from (the first sample of a mixed pair).
    pub sample: usize,
    pub input: Vec<f64>,
    pub terms: Vec<LossTerm>,
}

impl BatchItem {
    fn plain(data: &Dataset, i: usize, coeff: f64) -> Self {
        Self {
            sample: i,
            input: data.row(i).to_vec(),
            terms: vec![LossTerm {
                label: data.label(i),
                coeff,
            }],
        }
    }
}

/// Random substreams available to objectives.
pub struct ObjectiveRngs {
    pub lambda: StreamRng,
    pub pairing: StreamRng,
}

impl ObjectiveRngs {
    pub fn new(stream: &RngStream) -> Self {
        Self {
            lambda: stream.substream(Substream::MixupLambda),
            pairing: stream.substream(Substream::MixupPairing),
        }
    }
}

/// Turns a minibatch into weighted cross-entropy terms.
pub trait BatchObjective {
    /// Forward inputs for the minibatch `batch` (training indices).
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        rngs: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>>;

    /// Fix the term coefficients once the logits are known and return the
    /// minibatch objective value. The gradient taken afterwards is that of
    /// `Σ coeff · ℓ` over all terms.
    fn assign(&mut self, items: &mut [BatchItem], logits: &[&[f64]], data: &Dataset)
        -> Result<f64>;
}

fn weighted_value(items: &[BatchItem], logits: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for (it, z) in items.iter().zip(logits) {
        for t in &it.terms {
            total += t.coeff * cross_entropy(z, t.label)?;
        }
    }
    Ok(total)
}

/// Per-sample losses of single-term items.
fn sample_losses(items: &[BatchItem], logits: &[&[f64]]) -> Result<Vec<f64>> {
    items
        .iter()
        .zip(logits)
        .map(|(it, z)| cross_entropy(z, it.terms[0].label))
        .collect()
}

/// Batch mean of `w_i · ℓ_i`; unit weights when `weights` is `None`.
#[derive(Clone, Debug, Default)]
pub struct Weighted {
    pub weights: Option<Vec<f64>>,
}

impl BatchObjective for Weighted {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        _: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>> {
        let inv_b = 1.0 / batch.len() as f64;
        Ok(batch
            .iter()
            .map(|&i| {
                let c = match &self.weights {
                    Some(w) => w[i] * inv_b,
                    None => inv_b,
                };
                BatchItem::plain(data, i, c)
            })
            .collect())
    }

    fn assign(&mut self, items: &mut [BatchItem], logits: &[&[f64]], _: &Dataset) -> Result<f64> {
        weighted_value(items, logits)
    }
}

/// `d/dz [(1 − p)^γ · CE] = m · d/dz CE` with
/// `m = (1 − p)^γ − γ (1 − p)^{γ−1} p ln p`, where `p` is the
/// true-class probability.
pub fn focal_multiplier(p: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    let q = 1.0 - p;
    if q <= 0.0 {
        return 0.0;
    }
    q.powf(gamma) - gamma * q.powf(gamma - 1.0) * p * p.ln()
}

/// Focal loss `(1 − p_y)^γ · CE`.
#[derive(Clone, Debug)]
pub struct Focal {
    pub gamma: f64,
}

impl BatchObjective for Focal {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        _: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>> {
        Ok(batch
            .iter()
            .map(|&i| BatchItem::plain(data, i, 0.0))
            .collect())
    }

    fn assign(&mut self, items: &mut [BatchItem], logits: &[&[f64]], _: &Dataset) -> Result<f64> {
        let inv_b = 1.0 / items.len() as f64;
        let mut value = 0.0;
        for (it, z) in items.iter_mut().zip(logits) {
            let y = it.terms[0].label;
            let p = softmax(z)[y];
            let ce = cross_entropy(z, y)?;
            value += (1.0 - p).max(0.0).powf(self.gamma) * ce * inv_b;
            it.terms[0].coeff = focal_multiplier(p, self.gamma) * inv_b;
        }
        Ok(value)
    }
}

/// Exact CVaR of the empirical loss distribution at level `alpha`:
/// the mean of the worst `alpha·B` losses, counting the boundary sample
/// fractionally. Returns the objective and each sample's coefficient.
pub fn cvar_coefficients(losses: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let b = losses.len();
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| losses[j].total_cmp(&losses[i]).then(i.cmp(&j)));
    let k = alpha * b as f64;
    let full = (k.floor() as usize).min(b);
    let frac = k - full as f64;
    let inv = 1.0 / (alpha * b as f64);
    let mut coeffs = vec![0.0; b];
    let mut value = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let c = if rank < full {
            inv
        } else if rank == full && frac > 0.0 {
            frac * inv
        } else {
            0.0
        };
        coeffs[i] = c;
        value += c * losses[i];
    }
    (value, coeffs)
}

/// CVaR-DRO at level `alpha ∈ (0, 1]`.
#[derive(Clone, Debug)]
pub struct Cvar {
    pub alpha: f64,
}

impl BatchObjective for Cvar {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        _: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>> {
        Ok(batch
            .iter()
            .map(|&i| BatchItem::plain(data, i, 0.0))
            .collect())
    }

    fn assign(&mut self, items: &mut [BatchItem], logits: &[&[f64]], _: &Dataset) -> Result<f64> {
        let losses = sample_losses(items, logits)?;
        let (value, coeffs) = cvar_coefficients(&losses, self.alpha);
        for (it, c) in items.iter_mut().zip(coeffs) {
            it.terms[0].coeff = c;
        }
        Ok(value)
    }
}

/// One exponentiated-gradient step on the group simplex:
/// `q_g ← q_g · exp(η · ℓ̄_g)`, renormalized. Groups absent from the batch
/// (`None`) keep their unnormalized mass.
pub fn group_dro_update(q: &mut [f64], group_losses: &[Option<f64>], eta: f64) {
    for (qg, l) in q.iter_mut().zip(group_losses) {
        if let Some(l) = l {
            *qg *= (eta * l).exp();
        }
    }
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
}

/// Online group DRO: minimizes `Σ_g q_g ℓ̄_g` while `q` tracks the
/// worst groups.
#[derive(Clone, Debug)]
pub struct GroupDro {
    pub eta_q: f64,
    pub q: Vec<f64>,
}

impl GroupDro {
    pub fn new(num_groups: usize, eta_q: f64) -> Self {
        Self {
            eta_q,
            q: vec![1.0 / num_groups as f64; num_groups],
        }
    }
}

impl BatchObjective for GroupDro {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        _: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>> {
        Ok(batch
            .iter()
            .map(|&i| BatchItem::plain(data, i, 0.0))
            .collect())
    }

    fn assign(
        &mut self,
        items: &mut [BatchItem],
        logits: &[&[f64]],
        data: &Dataset,
    ) -> Result<f64> {
        let groups = data.require_groups("group DRO needs group labels")?;
        let losses = sample_losses(items, logits)?;
        let ng = self.q.len();
        let mut sum = vec![0.0; ng];
        let mut count = vec![0usize; ng];
        for (it, l) in items.iter().zip(&losses) {
            let g = groups[it.sample];
            sum[g] += l;
            count[g] += 1;
        }
        let means: Vec<Option<f64>> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        group_dro_update(&mut self.q, &means, self.eta_q);
        let mut value = 0.0;
        for (g, m) in means.iter().enumerate() {
            if let Some(m) = m {
                value += self.q[g] * m;
            }
        }
        for it in items.iter_mut() {
            let g = groups[it.sample];
            it.terms[0].coeff = self.q[g] / count[g] as f64;
        }
        Ok(value)
    }
}

/// How the second sample of each mixup pair is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Random permutation of the minibatch.
    #[default]
    Permutation,
    /// Random permutation within each (label, group) cell of the minibatch.
    InGroup,
    /// Every sample is paired with itself.
    Identity,
}

/// Importance-weighted mixup. Per minibatch: draw `p ~ U(0, 1)`; take
/// `λ ~ Beta(α, α)` if `p < σ`, else `λ = 0`; mix `x̃ = λ x_i + (1 − λ) x_j`
/// and score it with `w_i λ ℓ(x̃, y_i) + w_j (1 − λ) ℓ(x̃, y_j)`, averaged
/// over the minibatch. Unit weights give vanilla mixup.
#[derive(Clone, Debug)]
pub struct Mixup {
    pub weights: Option<Vec<f64>>,
    pub alpha: f64,
    pub sigma: f64,
    pub pairing: Pairing,
    /// Every `(i, j)` pair drawn, when auditing is switched on.
    pub audit: Option<Vec<(usize, usize)>>,
    /// λ of every minibatch, when auditing is switched on.
    pub lambdas: Option<Vec<f64>>,
}

impl Mixup {
    pub fn new(weights: Option<Vec<f64>>, alpha: f64, sigma: f64, pairing: Pairing) -> Self {
        Self {
            weights,
            alpha,
            sigma,
            pairing,
            audit: None,
            lambdas: None,
        }
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Vec::new());
        self.lambdas = Some(Vec::new());
        self
    }

    fn partners(&self, batch: &[usize], data: &Dataset, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let b = batch.len();
        Ok(match self.pairing {
            Pairing::Identity => (0..b).collect(),
            Pairing::Permutation => {
                let mut perm: Vec<usize> = (0..b).collect();
                perm.shuffle(rng);
                perm
            }
            Pairing::InGroup => {
                let groups = data.require_groups("in-group mixup needs group labels")?;
                let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
                for (pos, &i) in batch.iter().enumerate() {
                    cells
                        .entry((data.label(i), groups[i]))
                        .or_default()
                        .push(pos);
                }
                let mut perm = vec![0; b];
                for members in cells.values() {
                    let mut shuffled = members.clone();
                    shuffled.shuffle(rng);
                    for (&pos, &other) in members.iter().zip(&shuffled) {
                        perm[pos] = other;
                    }
                }
                perm
            }
        })
    }
}

impl BatchObjective for Mixup {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        rngs: &mut ObjectiveRngs,
    ) -> Result<Vec<BatchItem>> {
        let perm = self.partners(batch, data, &mut rngs.pairing)?;
        let p: f64 = rngs.lambda.random();
        let lambda = if p < self.sigma {
            sample_beta(self.alpha, &mut rngs.lambda)?
        } else {
            0.0
        };
        if let Some(l) = &mut self.lambdas {
            l.push(lambda);
        }
        let inv_b = 1.0 / batch.len() as f64;
        let mut items = Vec::with_capacity(batch.len());
        for (pos, &i) in batch.iter().enumerate() {
            let j = batch[perm[pos]];
            if let Some(a) = &mut self.audit {
                a.push((i, j));
            }
            let input = if i == j {
                data.row(i).to_vec()
            } else {
                data.row(i)
                    .iter()
                    .zip(data.row(j))
                    .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                    .collect()
            };
            let (wi, wj) = match &self.weights {
                Some(w) => (w[i], w[j]),
                None => (1.0, 1.0),
            };
            items.push(BatchItem {
                sample: i,
                input,
                terms: vec![
                    LossTerm {
                        label: data.label(i),
                        coeff: wi * lambda * inv_b,
                    },
                    LossTerm {
                        label: data.label(j),
                        coeff: wj * (1.0 - lambda) * inv_b,
                    },
                ],
            });
        }
        Ok(items)
    }

    fn assign(&mut self, items: &mut [BatchItem], logits: &[&[f64]], _: &Dataset) -> Result<f64> {
        weighted_value(items, logits)
    }
}

/// Static inverse-frequency weights `n / (G · n_g)` over the nonempty
/// groups; their mean is 1.
pub fn static_group_weights(data: &Dataset) -> Result<Vec<f64>> {
    let groups = data.require_groups("static reweighting needs group labels")?;
    let counts = data.group_counts().unwrap_or_default();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return Err(Error::EmptyDataset(data.name().to_string()));
    }
    let n = data.len() as f64;
    Ok(groups
        .iter()
        .map(|&g| n / (present as f64 * counts[g] as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn cvar_top_half() {
        let (v, c) = cvar_coefficients(&[1.0, 2.0, 3.0, 4.0], 0.5);
        assert!((v - 3.5).abs() < 1e-15);
        assert_eq!(c, vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn cvar_matches_variational_form() {
        // min over η of η + (1/α)·mean[(ℓ − η)+], brute-forced on a fine grid
        let losses = [0.3, 2.2, 1.7, 0.9, 4.1, 3.3, 0.05];
        for alpha in [0.1, 0.25, 0.5, 0.8, 1.0] {
            let (v, _) = cvar_coefficients(&losses, alpha);
            let brute = (0..=50_000)
                .map(|k| k as f64 * 1e-4)
                .map(|eta| {
                    eta + losses.iter().map(|l| (l - eta).max(0.0)).sum::<f64>()
                        / (alpha * losses.len() as f64)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((v - brute).abs() < 1e-3, "alpha {alpha}: {v} vs {brute}");
        }
    }

    #[test]
    fn cvar_at_level_one_is_the_mean() {
        let losses = [0.5, 1.5, 2.0];
        let (v, c) = cvar_coefficients(&losses, 1.0);
        assert!((v - 4.0 / 3.0).abs() < 1e-15);
        assert!(c.iter().all(|&x| x == 1.0 / 3.0));
    }

    #[test]
    fn focal_multiplier_values() {
        assert_eq!(focal_multiplier(0.3, 0.0), 1.0);
        assert_eq!(focal_multiplier(1.0, 2.0), 0.0);
        // loss factor (1 − 0.9)^2 = 0.01
        assert!(((1.0f64 - 0.9).powf(2.0) - 0.01).abs() < 1e-15);
        // finite difference of (1 − p(z))^γ · CE(z) along the true logit
        let (gamma, z0) = (2.0, 0.7);
        let f = |z: f64| {
            let p = 1.0 / (1.0 + (-z).exp());
            (1.0 - p).powf(gamma) * -p.ln()
        };
        let h = 1e-6;
        let fd = (f(z0 + h) - f(z0 - h)) / (2.0 * h);
        let p = 1.0 / (1.0 + (-z0).exp());
        // d CE / dz_y = p − 1 for the binary logit (z, 0)
        let analytic = focal_multiplier(p, gamma) * (p - 1.0);
        assert!((fd - analytic).abs() < 1e-8, "{fd} vs {analytic}");
    }

    #[test]
    fn group_dro_update_without_step_stays_uniform() {
        let mut q = vec![0.25; 4];
        group_dro_update(&mut q, &[Some(3.0), Some(1.0), None, Some(0.2)], 0.0);
        assert!(q.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn static_weights_example() {
        let d = Dataset::new(
            "s",
            Split::Train,
            1,
            vec![0.0; 4],
            vec![0, 0, 0, 1],
            Some(vec![0, 0, 0, 1]),
            2,
            2,
        )
        .unwrap();
        let w = static_group_weights(&d).unwrap();
        for (a, b) in w.iter().zip([2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-15);
    }
}
