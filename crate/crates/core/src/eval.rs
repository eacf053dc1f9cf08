//! Group-wise evaluation, checkpoint selection and uncertainty reports.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::cross_entropy;
use crate::model::ModelParams;
use crate::train::{Checkpoint, TrainLog};

/// Accuracy of a model on every group of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_group_acc: Vec<f64>,
    /// Sample-level accuracy over the whole dataset.
    pub avg_acc: f64,
    pub worst_acc: f64,
    pub worst_group: usize,
    pub n_per_group: Vec<usize>,
    /// Unweighted mean of the per-group accuracies.
    pub group_mean_acc: f64,
}

/// Scores precomputed predictions against `data`.
pub fn evaluate_predictions(preds: &[usize], data: &Dataset) -> Result<EvalReport> {
    let groups = data.require_groups("evaluation reports per-group accuracy")?;
    if preds.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: preds.len(),
        });
    }
    let ng = data.num_groups();
    let mut hit = vec![0usize; ng];
    let mut tot = vec![0usize; ng];
    for ((&p, &y), &g) in preds.iter().zip(data.labels()).zip(groups) {
        tot[g] += 1;
        hit[g] += usize::from(p == y);
    }
    if let Some(empty) = tot.iter().position(|&t| t == 0) {
        return Err(Error::EmptyGroup(empty));
    }
    let per_group_acc: Vec<f64> = hit
        .iter()
        .zip(&tot)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    let mut worst_group = 0;
    for (g, &a) in per_group_acc.iter().enumerate() {
        if a < per_group_acc[worst_group] {
            worst_group = g;
        }
    }
    Ok(EvalReport {
        worst_acc: per_group_acc[worst_group],
        worst_group,
        avg_acc: hit.iter().sum::<usize>() as f64 / data.len() as f64,
        group_mean_acc: per_group_acc.iter().sum::<f64>() / ng as f64,
        per_group_acc,
        n_per_group: tot,
    })
}

pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<EvalReport> {
    let preds = data
        .rows()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, data)
}

/// Plain accuracy, no groups needed.
pub fn accuracy(model: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut hit = 0usize;
    for (x, &y) in data.rows().zip(data.labels()) {
        hit += usize::from(model.predict(x)? == y);
    }
    Ok(hit as f64 / data.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Highest validation worst-group accuracy (needs validation groups).
    WorstGroup,
    /// Highest validation accuracy (group-free).
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the checkpoint list.
    pub index: usize,
    pub epoch: usize,
    pub score: f64,
    /// Criterion value of every checkpoint, in order.
    pub scores: Vec<f64>,
}

/// Picks the checkpoint maximizing the criterion on `val`; the earliest
/// epoch wins ties.
pub fn select_checkpoint(
    checkpoints: &[Checkpoint],
    val: &Dataset,
    criterion: SelectionCriterion,
) -> Result<Selection> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("no checkpoints to select from"));
    }
    if criterion == SelectionCriterion::WorstGroup && val.groups().is_none() {
        return Err(Error::MissingGroups(
            "worst-group selection needs validation group labels; use the `average` criterion"
                .into(),
        ));
    }
    let scores = checkpoints
        .iter()
        .map(|c| match criterion {
            SelectionCriterion::WorstGroup => evaluate(&c.params, val).map(|r| r.worst_acc),
            SelectionCriterion::Average => accuracy(&c.params, val),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(Selection {
        index: best,
        epoch: checkpoints[best].epoch,
        score: scores[best],
        scores,
    })
}

/// Per-group Gaussian kernel density estimates of uncertainty scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    /// `density[g][m]` at `grid[m]`.
    pub density: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
    pub group_mean: Vec<f64>,
}

pub const KDE_GRID_POINTS: usize = 256;
const KDE_MIN_BANDWIDTH: f64 = 0.01;
/// Bandwidths of padding on each side of `[0, 1]`, so the leakage past the
/// boundary stays on the grid.
const KDE_PAD: f64 = 4.0;

impl KdeCurve {
    /// Trapezoidal integral of group `g`'s density over the grid.
    pub fn mass(&self, g: usize) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density[g].windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Grid point where group `g`'s density peaks.
    pub fn mode(&self, g: usize) -> f64 {
        self.grid[crate::loss::argmax(&self.density[g])]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("grid");
        for g in 0..self.density.len() {
            s.push_str(&format!(",density_g{g}"));
        }
        s.push('\n');
        for (m, x) in self.grid.iter().enumerate() {
            s.push_str(&format!("{x:?}"));
            for d in &self.density {
                s.push_str(&format!(",{:?}", d[m]));
            }
            s.push('\n');
        }
        s
    }
}

/// Silverman's rule `1.06 · σ̂ · n^{−1/5}`, floored at 0.01.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (1.06 * var.sqrt() * n.powf(-0.2)).max(KDE_MIN_BANDWIDTH)
}

/// Gaussian KDE per group on a 256-point grid spanning `[0, 1]` widened by
/// four of the largest bandwidths on each side.
pub fn kde_report(u: &[f64], groups: &[usize], num_groups: usize) -> Result<KdeCurve> {
    if u.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: groups.len(),
        });
    }
    let mut by_group: Vec<Vec<f64>> = vec![Vec::new(); num_groups];
    for (&v, &g) in u.iter().zip(groups) {
        if g >= num_groups {
            return Err(Error::invalid(format!(
                "group {g} out of range for {num_groups} groups"
            )));
        }
        by_group[g].push(v);
    }
    if let Some(g) = by_group.iter().position(|v| v.len() < 2) {
        return Err(Error::invalid(format!(
            "group {g} has {} samples; a density estimate needs at least 2",
            by_group[g].len()
        )));
    }
    let bandwidth: Vec<f64> = by_group.iter().map(|v| silverman_bandwidth(v)).collect();
    let pad = KDE_PAD * bandwidth.iter().copied().fold(0.0, f64::max);
    let (lo, hi) = (-pad, 1.0 + pad);
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|m| lo + m as f64 * step).collect();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let density = by_group
        .iter()
        .zip(&bandwidth)
        .map(|(vals, &h)| {
            let scale = norm / (vals.len() as f64 * h);
            grid.iter()
                .map(|&x| {
                    scale
                        * vals
                            .iter()
                            .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let group_mean = by_group
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth,
        group_mean,
    })
}

/// Per-group training-accuracy series, one row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCurves {
    pub epochs: Vec<usize>,
    /// `series[g][e]`.
    pub series: Vec<Vec<f64>>,
}

impl GroupCurves {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch");
        for g in 0..self.series.len() {
            s.push_str(&format!(",acc_g{g}"));
        }
        s.push('\n');
        for (e, epoch) in self.epochs.iter().enumerate() {
            s.push_str(&epoch.to_string());
            for ser in &self.series {
                s.push_str(&format!(",{:?}", ser[e]));
            }
            s.push('\n');
        }
        s
    }

    /// First epoch at which group `g` reaches `level`, if ever.
    pub fn first_epoch_reaching(&self, g: usize, level: f64) -> Option<usize> {
        self.series[g]
            .iter()
            .position(|&a| a >= level)
            .map(|e| self.epochs[e])
    }
}

pub fn group_curves(log: &TrainLog) -> Result<GroupCurves> {
    if log.num_groups == 0 {
        return Err(Error::MissingGroups(
            "the training log was recorded without groups".into(),
        ));
    }
    let mut series = vec![Vec::with_capacity(log.epochs.len()); log.num_groups];
    for rec in &log.epochs {
        for (g, s) in series.iter_mut().enumerate() {
            s.push(rec.group_acc[g]);
        }
    }
    Ok(GroupCurves {
        epochs: log.epochs.iter().map(|r| r.epoch).collect(),
        series,
    })
}

fn weighted_mean_loss(model: &ModelParams, data: &Dataset, group_weights: &[f64]) -> Result<f64> {
    let groups = data.require_groups("the weighted generalization gap uses group weights")?;
    let mut total = 0.0;
    for ((x, &y), &g) in data.rows().zip(data.labels()).zip(groups) {
        let w = *group_weights.get(g).ok_or_else(|| {
            Error::invalid(format!(
                "no weight for group {g} ({} given)",
                group_weights.len()
            ))
        })?;
        total += w * cross_entropy(&model.forward_logits(x)?, y)?;
    }
    Ok(total / data.len() as f64)
}

/// Weighted generalization gap `mean_test[w_g ℓ] − mean_train[w_g ℓ]`,
/// with the held-out split standing in for the population.
pub fn estimate_gerror(
    model: &ModelParams,
    group_weights: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<f64> {
    Ok(weighted_mean_loss(model, test, group_weights)?
        - weighted_mean_loss(model, train, group_weights)?)
}
