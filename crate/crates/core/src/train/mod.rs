//! Training procedures: ERM, the weighted-mixup method and the baselines.
//!
//! All procedures share one minibatch SGD loop ([`fit`]) and differ only in
//! the [`BatchObjective`] that turns a minibatch into weighted
//! cross-entropy terms. Because the loop, the random substreams and the
//! floating-point evaluation order are shared, a procedure that reduces to
//! another (focal loss with `γ = 0` is ERM, CVaR at level 1 is ERM, …)
//! reproduces its parameter trajectory bit for bit.

mod methods;
mod objective;

pub use methods::{
    train_cvar_dro, train_erm, train_focal, train_group_dro, train_ingroup_mixup, train_jtt,
    train_static_reweight, train_umix, train_vanilla_mixup, train_weighted_erm, GroupDroOutcome,
    JttOutcome,
};
pub use objective::{
    cvar_coefficients, focal_multiplier, group_dro_update, static_group_weights, BatchItem,
    BatchObjective, Cvar, Focal, GroupDro, Mixup, ObjectiveRngs, Pairing, Weighted,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::{backward, Gradient};
use crate::model::{Architecture, ModelParams};
use crate::optim::{sgd_step, OptimizerState};
use crate::rng::{RngStream, Substream};
use crate::uncertainty::PredictionTrace;

/// Optimizer and schedule shared by every training procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        OptimizerState::new(self.lr, self.weight_decay)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let Architecture::Mlp { hidden } = &self.arch {
            if hidden.contains(&0) {
                return Err(Error::config("hidden layer widths must be positive"));
            }
        }
        Ok(())
    }
}

/// Mixup settings: `alpha` is the Beta shape, `sigma` the probability that a
/// minibatch is mixed at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UmixConfig {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default)]
    pub pairing: Pairing,
    pub base: TrainConfig,
}

impl UmixConfig {
    pub fn new(alpha: f64, sigma: f64, base: TrainConfig) -> Self {
        Self {
            alpha,
            sigma,
            pairing: Pairing::Permutation,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::config(format!(
                "sigma must lie in [0, 1], got {}",
                self.sigma
            )));
        }
        self.base.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Per-group training accuracy; empty when groups are unknown.
    pub group_acc: Vec<f64>,
    /// File the checkpoint of this epoch was written to, once persisted.
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub num_groups: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc");
        for g in 0..self.num_groups {
            s.push_str(&format!(",acc_g{g}"));
        }
        s.push_str(",checkpoint\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:?},{:?}", r.epoch, r.train_loss, r.train_acc));
            for a in &r.group_acc {
                s.push_str(&format!(",{a:?}"));
            }
            s.push_str(&format!(",{}\n", r.checkpoint.as_deref().unwrap_or("")));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// 0-based epoch after which the parameters were captured.
    pub epoch: usize,
    pub params: ModelParams,
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub checkpoints: Vec<Checkpoint>,
    pub log: TrainLog,
    /// Training-set predictions after every epoch.
    pub trace: PredictionTrace,
}

pub(crate) fn predictions(params: &ModelParams, data: &Dataset) -> Result<Vec<u32>> {
    data.rows()
        .map(|x| params.predict(x).map(|c| c as u32))
        .collect()
}

fn accuracy_summary(preds: &[u32], data: &Dataset) -> (f64, Vec<f64>) {
    let correct: Vec<bool> = preds
        .iter()
        .zip(data.labels())
        .map(|(&p, &y)| p as usize == y)
        .collect();
    let acc = correct.iter().filter(|&&c| c).count() as f64 / data.len().max(1) as f64;
    let group_acc = match data.groups() {
        Some(groups) => {
            let mut hit = vec![0usize; data.num_groups()];
            let mut tot = vec![0usize; data.num_groups()];
            for (&g, &c) in groups.iter().zip(&correct) {
                tot[g] += 1;
                hit[g] += usize::from(c);
            }
            hit.iter()
                .zip(&tot)
                .map(|(&h, &t)| {
                    if t == 0 {
                        f64::NAN
                    } else {
                        h as f64 / t as f64
                    }
                })
                .collect()
        }
        None => Vec::new(),
    };
    (acc, group_acc)
}

/// Minibatch SGD on `data` driven by `objective`, starting from a fresh
/// initialization drawn from `cfg.seed`.
pub fn fit(
    data: &Dataset,
    cfg: &TrainConfig,
    objective: &mut dyn BatchObjective,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(data.name().to_string()));
    }
    let stream = RngStream::new(cfg.seed);
    let mut params = ModelParams::init(&cfg.arch, data.dim(), data.num_classes(), &stream)?;
    let mut opt = OptimizerState::new(cfg.lr, cfg.weight_decay)?;
    let mut shuffle = stream.substream(Substream::DataShuffle);
    let mut rngs = ObjectiveRngs::new(&stream);

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = Gradient::zeros_like(&params);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut log = TrainLog {
        num_groups: data.num_groups(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut trace = PredictionTrace::new(
        data.fingerprint(),
        n,
        cfg.seed,
        crate::io::content_hash(cfg),
    );

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut items = objective.build(batch, data, &mut rngs)?;
            let caches = items
                .iter()
                .map(|it| params.forward_cached(&it.input))
                .collect::<Result<Vec<_>>>()?;
            let logits: Vec<&[f64]> = caches.iter().map(|c| c.logits()).collect();
            let value = objective.assign(&mut items, &logits, data)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "batch objective in epoch {epoch}"
                )));
            }
            grad.fill_zero();
            for (item, cache) in items.iter().zip(&caches) {
                backward(&params, cache, &item.terms, &mut grad)?;
            }
            sgd_step(&mut params, &grad, &mut opt)?;
            loss_sum += value * batch.len() as f64;
        }
        let preds = predictions(&params, data)?;
        let (train_acc, group_acc) = accuracy_summary(&preds, data);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc,
            group_acc,
            checkpoint: None,
        });
        trace.push(epoch, preds)?;
        checkpoints.push(Checkpoint {
            epoch,
            params: params.clone(),
        });
    }
    Ok(TrainOutcome {
        params,
        checkpoints,
        log,
        trace,
    })
}
