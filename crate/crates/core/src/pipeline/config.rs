use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, FourMoonsSpec, GroupColumn, Split, SpuriousSpec};
use crate::error::{Error, Result};
use crate::eval::SelectionCriterion;
use crate::train::{Pairing, TrainConfig};

/// Where the data of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    FourMoons(FourMoonsData),
    Spurious(SpuriousSpec),
    Csv(CsvData),
}

/// Four-moons training set; validation and test sets are drawn from the
/// same generator with `eval_samples_per_group` points per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FourMoonsData {
    pub samples_per_group: [usize; 4],
    pub noise_std: f64,
    pub seed: u64,
    pub eval_samples_per_group: usize,
}

impl Default for FourMoonsData {
    fn default() -> Self {
        let spec = FourMoonsSpec::default();
        Self {
            samples_per_group: spec.samples_per_group,
            noise_std: spec.noise_std,
            seed: spec.seed,
            eval_samples_per_group: 250,
        }
    }
}

impl FourMoonsData {
    pub fn train_spec(&self) -> FourMoonsSpec {
        FourMoonsSpec {
            samples_per_group: self.samples_per_group,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }
}

/// Three CSV files sharing one schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub num_classes: usize,
    #[serde(default = "optional_groups")]
    pub groups: GroupColumn,
    #[serde(default)]
    pub num_groups: Option<usize>,
}

fn optional_groups() -> GroupColumn {
    GroupColumn::Optional
}

impl CsvData {
    pub fn schema(&self, split: Split) -> CsvSchema {
        CsvSchema {
            num_classes: self.num_classes,
            groups: self.groups,
            num_groups: self.num_groups,
            split,
        }
    }
}

/// A training procedure and its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Erm,
    VanillaMixup {
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "half")]
        sigma: f64,
    },
    IngroupMixup {
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "half")]
        sigma: f64,
    },
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    CvarDro {
        #[serde(default = "default_cvar")]
        alpha: f64,
    },
    /// `t_id` defaults to the uncertainty `start_epoch`, `lambda_up` to `eta + 1`.
    Jtt {
        #[serde(default)]
        t_id: Option<usize>,
        #[serde(default)]
        lambda_up: Option<f64>,
    },
    StaticReweight,
    GroupDro {
        #[serde(default = "default_eta_q")]
        eta_q: f64,
    },
    Umix {
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "half")]
        sigma: f64,
        #[serde(default)]
        pairing: Pairing,
    },
}

fn half() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    2.0
}
fn default_cvar() -> f64 {
    0.2
}
fn default_eta_q() -> f64 {
    0.01
}

pub const METHOD_NAMES: [&str; 9] = [
    "erm",
    "vanilla_mixup",
    "ingroup_mixup",
    "focal",
    "cvar_dro",
    "jtt",
    "static_reweight",
    "group_dro",
    "umix",
];

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Erm => "erm",
            MethodConfig::VanillaMixup { .. } => "vanilla_mixup",
            MethodConfig::IngroupMixup { .. } => "ingroup_mixup",
            MethodConfig::Focal { .. } => "focal",
            MethodConfig::CvarDro { .. } => "cvar_dro",
            MethodConfig::Jtt { .. } => "jtt",
            MethodConfig::StaticReweight => "static_reweight",
            MethodConfig::GroupDro { .. } => "group_dro",
            MethodConfig::Umix { .. } => "umix",
        }
    }

    pub fn is_group_aware(&self) -> bool {
        matches!(
            self,
            MethodConfig::IngroupMixup { .. }
                | MethodConfig::StaticReweight
                | MethodConfig::GroupDro { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{}: {what} must be positive, got {v}",
                    self.name()
                )))
            }
        };
        let unit = |what: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{}: {what} must lie in [0, 1], got {v}",
                    self.name()
                )))
            }
        };
        match *self {
            MethodConfig::Erm | MethodConfig::StaticReweight => Ok(()),
            MethodConfig::VanillaMixup { alpha, sigma }
            | MethodConfig::IngroupMixup { alpha, sigma }
            | MethodConfig::Umix { alpha, sigma, .. } => {
                positive("alpha", alpha)?;
                unit("sigma", sigma)
            }
            MethodConfig::Focal { gamma } => {
                if gamma >= 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "focal: gamma must be nonnegative, got {gamma}"
                    )))
                }
            }
            MethodConfig::CvarDro { alpha } => {
                positive("alpha", alpha)?;
                unit("alpha", alpha)
            }
            MethodConfig::Jtt { lambda_up, .. } => match lambda_up {
                Some(l) if !(l >= 1.0 && l.is_finite()) => Err(Error::config(format!(
                    "jtt: lambda_up must be ≥ 1, got {l}"
                ))),
                _ => Ok(()),
            },
            MethodConfig::GroupDro { eta_q } => {
                if eta_q >= 0.0 && eta_q.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "group_dro: eta_q must be nonnegative, got {eta_q}"
                    )))
                }
            }
        }
    }
}

/// Settings of the uncertainty phase: window `[start_epoch, start_epoch +
/// window)` of the ERM trace and the affine map `w = eta·u + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub start_epoch: usize,
    pub window: usize,
    pub eta: f64,
    #[serde(default = "one")]
    pub c: f64,
    /// Extra `eta` values evaluated from the same stored uncertainties.
    #[serde(default)]
    pub eta_sweep: Vec<f64>,
    /// ERM settings for the trace run; defaults to the shared `[train]`.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub criterion: SelectionCriterion,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            criterion: SelectionCriterion::WorstGroup,
        }
    }
}

/// Parameters of the `theory-check` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub dim: usize,
    pub samples: usize,
    pub theta_norm: f64,
    pub alphas: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
    /// Relative tolerance of the eigenvalue cut in the covariance rank.
    pub rank_eps: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            samples: 200,
            theta_norm: 0.5,
            alphas: vec![4.0, 8.0, 16.0, 32.0],
            mc_samples: 200_000,
            seed: 0,
            rank_eps: 1e-9,
        }
    }
}

/// A complete experiment: data, methods, schedule, seeds and outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub uncertainty: Option<UncertaintyConfig>,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Keep the parameters of every epoch, not only the selected one.
    #[serde(default)]
    pub save_all_checkpoints: bool,
    #[serde(default)]
    pub theory: Option<TheoryConfig>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Checks every cross-field constraint before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.methods.is_empty() {
            return Err(Error::config(format!(
                "no methods given; choose from {}",
                METHOD_NAMES.join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        let needs_uncertainty = self.methods.iter().any(|m| {
            matches!(
                m,
                MethodConfig::Umix { .. }
                    | MethodConfig::Jtt { t_id: None, .. }
                    | MethodConfig::Jtt {
                        lambda_up: None,
                        ..
                    }
            )
        });
        match &self.uncertainty {
            Some(u) => {
                if u.window == 0 {
                    return Err(Error::config("uncertainty.window must be at least 1"));
                }
                if !(u.c > 0.0 && u.c.is_finite()) {
                    return Err(Error::config(format!(
                        "uncertainty.c must be positive, got {}",
                        u.c
                    )));
                }
                for &eta in std::iter::once(&u.eta).chain(&u.eta_sweep) {
                    if !(eta >= 0.0 && eta.is_finite()) {
                        return Err(Error::config(format!("eta must be nonnegative, got {eta}")));
                    }
                }
                let trace_cfg = self.trace_config();
                trace_cfg.validate()?;
                if trace_cfg.epochs < u.start_epoch + u.window {
                    return Err(Error::config(format!(
                        "uncertainty needs ERM epochs ≥ start_epoch + window = {}, got {}",
                        u.start_epoch + u.window,
                        trace_cfg.epochs
                    )));
                }
            }
            None if needs_uncertainty => {
                return Err(Error::config(
                    "umix (and jtt without explicit t_id/lambda_up) needs an [uncertainty] section",
                ));
            }
            None => {}
        }
        if let DatasetConfig::FourMoons(m) = &self.dataset {
            if m.eval_samples_per_group == 0 {
                return Err(Error::config("eval_samples_per_group must be positive"));
            }
        }
        Ok(())
    }

    /// ERM configuration of the uncertainty trace, before the per-seed seed.
    pub fn trace_config(&self) -> TrainConfig {
        self.uncertainty
            .as_ref()
            .and_then(|u| u.train.clone())
            .unwrap_or_else(|| self.train.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        methods = [{ name = "erm" }]
        [dataset]
        kind = "four_moons"
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.selection.criterion, SelectionCriterion::WorstGroup);
        match c.dataset {
            DatasetConfig::FourMoons(m) => {
                assert_eq!(m.samples_per_group, [1000, 1000, 50, 50]);
                assert_eq!(m.eval_samples_per_group, 250);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let text = r#"
            seeds = [1, 2]
            master_seed = 9
            [dataset]
            kind = "spurious"
            minority_fraction = 0.02
            [train]
            epochs = 12
            arch = { kind = "glm" }
            [uncertainty]
            start_epoch = 2
            window = 4
            eta = 20.0
            [[methods]]
            name = "umix"
            alpha = 2.0
            [[methods]]
            name = "jtt"
            [[methods]]
            name = "focal"
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_and_methods_are_rejected() {
        let typo = MINIMAL.replace(
            "kind = \"four_moons\"",
            "kind = \"four_moons\"\nnoise_sdt = 0.1",
        );
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("\"erm\"", "\"sgd\"")).unwrap_err();
        assert!(err.to_string().contains("umix"), "{err}");
        let bad_param = MINIMAL.replace("{ name = \"erm\" }", "{ name = \"focal\", gama = 1.0 }");
        assert!(ExperimentConfig::from_toml(&bad_param).is_err());
    }

    #[test]
    fn umix_window_checked_before_work() {
        let text = r#"
            methods = [{ name = "umix" }]
            [dataset]
            kind = "four_moons"
            [train]
            epochs = 5
            [uncertainty]
            start_epoch = 3
            window = 3
            eta = 10.0
        "#;
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("start_epoch + window"), "{err}");
        let no_section = "methods = [{ name = \"umix\" }]\n[dataset]\nkind = \"four_moons\"\n";
        assert!(ExperimentConfig::from_toml(no_section).is_err());
    }
}
