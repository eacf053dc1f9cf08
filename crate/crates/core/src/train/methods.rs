use super::{
    fit, Cvar, Focal, GroupDro, Mixup, Pairing, TrainConfig, TrainOutcome, UmixConfig, Weighted,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::train::objective::static_group_weights;
use crate::uncertainty::ImportanceWeights;

/// Unweighted empirical risk minimization.
pub fn train_erm(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit(data, cfg, &mut Weighted::default())
}

/// ERM with fixed per-sample loss weights (batch mean of `w_i · ℓ_i`).
pub fn train_weighted_erm(
    data: &Dataset,
    cfg: &TrainConfig,
    weights: &[f64],
) -> Result<TrainOutcome> {
    check_weights(data, weights)?;
    fit(
        data,
        cfg,
        &mut Weighted {
            weights: Some(weights.to_vec()),
        },
    )
}

fn check_weights(data: &Dataset, weights: &[f64]) -> Result<()> {
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "sample weights must be finite and nonnegative",
        ));
    }
    Ok(())
}

/// Importance-weighted mixup. `weights` must have been computed on `data`.
pub fn train_umix(
    data: &Dataset,
    weights: &ImportanceWeights,
    cfg: &UmixConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.check_binding(data)?;
    check_weights(data, &weights.w)?;
    let mut obj = Mixup::new(Some(weights.w.clone()), cfg.alpha, cfg.sigma, cfg.pairing);
    fit(data, &cfg.base, &mut obj)
}

/// Mixup on arbitrary pairs with unit weights.
pub fn train_vanilla_mixup(data: &Dataset, cfg: &UmixConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut obj = Mixup::new(None, cfg.alpha, cfg.sigma, cfg.pairing);
    fit(data, &cfg.base, &mut obj)
}

/// Mixup restricted to pairs sharing both label and group.
pub fn train_ingroup_mixup(data: &Dataset, cfg: &UmixConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.require_groups("in-group mixup is group-aware")?;
    let mut obj = Mixup::new(None, cfg.alpha, cfg.sigma, Pairing::InGroup);
    fit(data, &cfg.base, &mut obj)
}

pub fn train_focal(data: &Dataset, cfg: &TrainConfig, gamma: f64) -> Result<TrainOutcome> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!(
            "focal gamma must be nonnegative, got {gamma}"
        )));
    }
    fit(data, cfg, &mut Focal { gamma })
}

pub fn train_cvar_dro(data: &Dataset, cfg: &TrainConfig, alpha: f64) -> Result<TrainOutcome> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!(
            "CVaR level must lie in (0, 1], got {alpha}"
        )));
    }
    fit(data, cfg, &mut Cvar { alpha })
}

#[derive(Clone, Debug)]
pub struct JttOutcome {
    pub outcome: TrainOutcome,
    /// Training indices misclassified by the stage-1 model.
    pub error_set: Vec<usize>,
}

/// Just-train-twice: ERM for `t_id` epochs, then a fresh model trained with
/// the stage-1 error set upweighted by `lambda_up`.
pub fn train_jtt(
    data: &Dataset,
    cfg: &TrainConfig,
    t_id: usize,
    lambda_up: f64,
) -> Result<JttOutcome> {
    if !(lambda_up >= 1.0 && lambda_up.is_finite()) {
        return Err(Error::config(format!(
            "lambda_up must be ≥ 1, got {lambda_up}"
        )));
    }
    let stage1_cfg = TrainConfig {
        epochs: t_id,
        ..cfg.clone()
    };
    let stage1 = fit(data, &stage1_cfg, &mut Weighted::default())?;
    let preds = super::predictions(&stage1.params, data)?;
    let error_set: Vec<usize> = preds
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter(|(_, (&p, &y))| p as usize != y)
        .map(|(i, _)| i)
        .collect();
    let mut weights = vec![1.0; data.len()];
    for &i in &error_set {
        weights[i] = lambda_up;
    }
    let outcome = train_weighted_erm(data, cfg, &weights)?;
    Ok(JttOutcome { outcome, error_set })
}

/// Weighted ERM with static inverse-group-frequency weights.
pub fn train_static_reweight(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let w = static_group_weights(data)?;
    train_weighted_erm(data, cfg, &w)
}

#[derive(Clone, Debug)]
pub struct GroupDroOutcome {
    pub outcome: TrainOutcome,
    /// Group weights at the end of every epoch.
    pub q_history: Vec<Vec<f64>>,
}

pub fn train_group_dro(data: &Dataset, cfg: &TrainConfig, eta_q: f64) -> Result<GroupDroOutcome> {
    if !(eta_q >= 0.0 && eta_q.is_finite()) {
        return Err(Error::config(format!(
            "eta_q must be nonnegative, got {eta_q}"
        )));
    }
    data.require_groups("group DRO is group-aware")?;
    let mut obj = TrackedGroupDro {
        inner: GroupDro::new(data.num_groups(), eta_q),
        history: Vec::new(),
        seen: 0,
        n: data.len(),
    };
    let outcome = fit(data, cfg, &mut obj)?;
    Ok(GroupDroOutcome {
        outcome,
        q_history: obj.history,
    })
}

/// Records `q` whenever an epoch's worth of samples has passed.
struct TrackedGroupDro {
    inner: GroupDro,
    history: Vec<Vec<f64>>,
    seen: usize,
    n: usize,
}

impl super::BatchObjective for TrackedGroupDro {
    fn build(
        &mut self,
        batch: &[usize],
        data: &Dataset,
        rngs: &mut super::ObjectiveRngs,
    ) -> Result<Vec<super::BatchItem>> {
        self.inner.build(batch, data, rngs)
    }

    fn assign(
        &mut self,
        items: &mut [super::BatchItem],
        logits: &[&[f64]],
        data: &Dataset,
    ) -> Result<f64> {
        let v = self.inner.assign(items, logits, data)?;
        self.seen += items.len();
        if self.seen >= self.n {
            self.seen -= self.n;
            self.history.push(self.inner.q.clone());
        }
        Ok(v)
    }
}
