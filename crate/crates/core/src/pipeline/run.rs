use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
use super::config::{DatasetConfig, ExperimentConfig, MethodConfig};
use crate::data::{
    generate_four_moons, generate_spurious, load_csv, Dataset, FourMoonsSpec, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, select_checkpoint, EvalReport, SelectionCriterion};
use crate::io::{content_hash, write_atomic, write_json};
use crate::rng::derive_seed;
use crate::train::{
    fit, train_cvar_dro, train_focal, train_group_dro, train_ingroup_mixup, train_jtt,
    train_static_reweight, train_umix, train_vanilla_mixup, Checkpoint, TrainConfig, TrainOutcome,
    UmixConfig, Weighted,
};
use crate::uncertainty::{compute_uncertainty, compute_weights, ImportanceWeights};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "UMIX_BENCH_WORKERS";

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &DatasetConfig) -> Result<PreparedData> {
    match cfg {
        DatasetConfig::FourMoons(m) => {
            let spec = m.train_spec();
            let eval = |salt: u64| FourMoonsSpec {
                samples_per_group: [m.eval_samples_per_group; 4],
                noise_std: m.noise_std,
                seed: derive_seed(m.seed, salt),
            };
            let relabel = |d: Dataset, split: Split| {
                Dataset::new(
                    "four_moons",
                    split,
                    d.dim(),
                    d.features().to_vec(),
                    d.labels().to_vec(),
                    d.groups().map(<[usize]>::to_vec),
                    d.num_classes(),
                    d.num_groups(),
                )
            };
            Ok(PreparedData {
                train: generate_four_moons(&spec)?,
                val: relabel(generate_four_moons(&eval(1))?, Split::Val)?,
                test: relabel(generate_four_moons(&eval(2))?, Split::Test)?,
            })
        }
        DatasetConfig::Spurious(spec) => {
            let s = generate_spurious(spec)?;
            Ok(PreparedData {
                train: s.train,
                val: s.val,
                test: s.test,
            })
        }
        DatasetConfig::Csv(c) => Ok(PreparedData {
            train: load_csv(&c.train, &c.schema(Split::Train))?,
            val: load_csv(&c.val, &c.schema(Split::Val))?,
            test: load_csv(&c.test, &c.schema(Split::Test))?,
        }),
    }
}

/// Test metrics of the checkpoint one selection rule picked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedReport {
    pub criterion: SelectionCriterion,
    pub epoch: usize,
    pub val_score: f64,
    pub test: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Row label: the method name, with `eta` for uncertainty sweeps.
    pub method: String,
    pub params: MethodConfig,
    pub seed: u64,
    pub run_seed: u64,
    /// Selection under the configured criterion.
    pub selected: SelectedReport,
    /// Selection under the other criterion, on the same checkpoints.
    pub alternative: Option<SelectedReport>,
}

/// Mean and sample standard deviation (`n − 1`) over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub avg_mean: f64,
    pub avg_std: f64,
    pub worst_mean: f64,
    pub worst_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub criterion: SelectionCriterion,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
    pub provenance: Provenance,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups runs by method label (first-appearance order) and aggregates.
pub fn summarize(runs: &[RunRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let rows: Vec<&RunRecord> = runs.iter().filter(|r| r.method == m).collect();
            let avg: Vec<f64> = rows.iter().map(|r| r.selected.test.avg_acc).collect();
            let worst: Vec<f64> = rows.iter().map(|r| r.selected.test.worst_acc).collect();
            let (avg_mean, avg_std) = mean_std(&avg);
            let (worst_mean, worst_std) = mean_std(&worst);
            MethodSummary {
                method: m.to_string(),
                seeds: rows.len(),
                avg_mean,
                avg_std,
                worst_mean,
                worst_std,
            }
        })
        .collect()
}

/// One row of the experiment: a method (with a concrete `eta` for
/// uncertainty-weighted methods) and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub method: MethodConfig,
    pub eta: Option<f64>,
}

/// Expands the configured methods into rows; `umix` gets one row per
/// swept `eta`. Repeated labels get a `#k` suffix.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::new();
    for m in &cfg.methods {
        match (m, &cfg.uncertainty) {
            (MethodConfig::Umix { .. }, Some(u)) => {
                out.push(Cell {
                    label: "umix".into(),
                    method: m.clone(),
                    eta: Some(u.eta),
                });
                for &eta in &u.eta_sweep {
                    out.push(Cell {
                        label: format!("umix[eta={eta}]"),
                        method: m.clone(),
                        eta: Some(eta),
                    });
                }
            }
            _ => out.push(Cell {
                label: m.name().into(),
                method: m.clone(),
                eta: None,
            }),
        }
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for c in &mut out {
        let k = seen.entry(c.label.clone()).or_insert(0);
        *k += 1;
        if *k > 1 {
            c.label = format!("{}#{k}", c.label);
        }
    }
    out
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn run_dir(out: &Path, label: &str, seed: u64) -> PathBuf {
    seed_dir(out, seed).join(slug(label))
}

fn weights_stem(eta: f64) -> String {
    format!("weights-eta{eta}")
}

/// Builds the worker pool sized by [`WORKERS_ENV`] (all cores if unset).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::config(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                ))
            })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(e.to_string()))
}

fn seeded(cfg: &TrainConfig, run_seed: u64) -> TrainConfig {
    TrainConfig {
        seed: run_seed,
        ..cfg.clone()
    }
}

/// Phase A for one seed: ERM trace, uncertainty, and weights for every
/// configured `eta`, all persisted under `<out>/seed-<s>/uncertainty`.
/// Returns the ERM outcome so an identical `erm` row can reuse it.
pub fn uncertainty_phase(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    out: &Path,
) -> Result<Option<TrainOutcome>> {
    let Some(u) = &cfg.uncertainty else {
        return Ok(None);
    };
    let run_seed = derive_seed(cfg.master_seed, seed);
    let trace_cfg = seeded(&cfg.trace_config(), run_seed);
    if trace_cfg.epochs < u.start_epoch + u.window {
        return Err(Error::config("uncertainty window exceeds the ERM epochs"));
    }
    let outcome = fit(data, &trace_cfg, &mut Weighted::default())?;
    let dir = seed_dir(out, seed).join("uncertainty");
    outcome.trace.save(&dir, "trace")?;
    let scores = compute_uncertainty(&outcome.trace, data.labels(), u.start_epoch, u.window)?;
    for &eta in std::iter::once(&u.eta).chain(&u.eta_sweep) {
        compute_weights(&scores, eta, u.c)?.save(&dir, &weights_stem(eta))?;
    }
    Ok(Some(outcome))
}

/// Trains one cell for one seed. Uncertainty weights are read back from
/// disk and checked against the dataset before phase B starts.
pub fn train_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    data: &Dataset,
    seed: u64,
    out: &Path,
    erm_cache: Option<&TrainOutcome>,
) -> Result<TrainOutcome> {
    let run_seed = derive_seed(cfg.master_seed, seed);
    let base = seeded(&cfg.train, run_seed);
    let unc = cfg.uncertainty.as_ref();
    let load_weights = |eta: f64| -> Result<ImportanceWeights> {
        let w =
            ImportanceWeights::load(&seed_dir(out, seed).join("uncertainty"), &weights_stem(eta))?;
        w.check_binding(data)?;
        Ok(w)
    };
    match &cell.method {
        MethodConfig::Erm => match erm_cache {
            Some(o) if seeded(&cfg.trace_config(), run_seed) == base => Ok(o.clone()),
            _ => fit(data, &base, &mut Weighted::default()),
        },
        MethodConfig::VanillaMixup { alpha, sigma } => {
            train_vanilla_mixup(data, &UmixConfig::new(*alpha, *sigma, base))
        }
        MethodConfig::IngroupMixup { alpha, sigma } => {
            train_ingroup_mixup(data, &UmixConfig::new(*alpha, *sigma, base))
        }
        MethodConfig::Focal { gamma } => train_focal(data, &base, *gamma),
        MethodConfig::CvarDro { alpha } => train_cvar_dro(data, &base, *alpha),
        MethodConfig::Jtt { t_id, lambda_up } => {
            let t_id = t_id
                .or(unc.map(|u| u.start_epoch))
                .ok_or_else(|| Error::config("jtt needs t_id"))?;
            let lambda_up = lambda_up
                .or(unc.map(|u| u.eta + 1.0))
                .ok_or_else(|| Error::config("jtt needs lambda_up"))?;
            Ok(train_jtt(data, &base, t_id, lambda_up)?.outcome)
        }
        MethodConfig::StaticReweight => train_static_reweight(data, &base),
        MethodConfig::GroupDro { eta_q } => Ok(train_group_dro(data, &base, *eta_q)?.outcome),
        MethodConfig::Umix {
            alpha,
            sigma,
            pairing,
        } => {
            let eta = cell
                .eta
                .ok_or_else(|| Error::config("umix needs an [uncertainty] section"))?;
            let weights = load_weights(eta)?;
            let umix = UmixConfig {
                alpha: *alpha,
                sigma: *sigma,
                pairing: *pairing,
                base,
            };
            train_umix(data, &weights, &umix)
        }
    }
}

/// Selects under the configured criterion (and the other one when the
/// validation set has groups) and evaluates the picks on the test set.
pub fn select_and_evaluate(
    checkpoints: &[Checkpoint],
    val: &Dataset,
    test: &Dataset,
    criterion: SelectionCriterion,
) -> Result<(SelectedReport, Option<SelectedReport>)> {
    let pick = |c: SelectionCriterion| -> Result<SelectedReport> {
        let s = select_checkpoint(checkpoints, val, c)?;
        Ok(SelectedReport {
            criterion: c,
            epoch: s.epoch,
            val_score: s.score,
            test: evaluate(&checkpoints[s.index].params, test)?,
        })
    };
    let selected = pick(criterion)?;
    let other = match criterion {
        SelectionCriterion::WorstGroup => SelectionCriterion::Average,
        SelectionCriterion::Average => SelectionCriterion::WorstGroup,
    };
    let alternative = if val.groups().is_some() {
        Some(pick(other)?)
    } else {
        None
    };
    Ok((selected, alternative))
}

fn save_training_artifacts(
    dir: &Path,
    outcome: &TrainOutcome,
    config_hash: &str,
    fingerprint: &str,
    all: bool,
    selected_epoch: Option<usize>,
) -> Result<()> {
    let mut log = outcome.log.clone();
    for (rec, ck) in log.epochs.iter_mut().zip(&outcome.checkpoints) {
        let keep = all || Some(ck.epoch) == selected_epoch;
        if !keep {
            continue;
        }
        let stem = format!("epoch-{:04}", ck.epoch);
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            file: format!("{stem}.ckpt"),
            epoch: ck.epoch,
            config_hash: config_hash.to_string(),
            dataset_fingerprint: fingerprint.to_string(),
            train_loss: rec.train_loss,
            train_acc: rec.train_acc,
        };
        save_checkpoint(dir, &stem, &ck.params, &manifest)?;
        rec.checkpoint = Some(manifest.file);
    }
    write_atomic(&dir.join("log.csv"), log.to_csv().as_bytes())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn provenance(cfg: &ExperimentConfig, data: &PreparedData, started: u64) -> Provenance {
    Provenance {
        config_hash: content_hash(cfg),
        dataset_fingerprint: data.train.fingerprint(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
    }
}

/// Runs `f(seed, cell)` for every seed × cell in the worker pool and
/// returns results in (cell, seed) order. Phase A runs once per seed first.
fn for_each_run<T: Send>(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    out: &Path,
    f: impl Fn(u64, &Cell, Option<&TrainOutcome>) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let cells = cells(cfg);
    let pool = worker_pool()?;
    pool.install(|| {
        let phase_a: Vec<Option<TrainOutcome>> = cfg
            .seeds
            .par_iter()
            .map(|&s| uncertainty_phase(cfg, &data.train, s, out))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..cells.len())
            .flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s)))
            .collect();
        jobs.par_iter()
            .map(|&(c, s)| f(cfg.seeds[s], &cells[c], phase_a[s].as_ref()))
            .collect()
    })
}

/// Trains every cell and seed, keeping the checkpoints of every epoch on
/// disk for a later [`evaluate_saved`].
pub fn train_all(cfg: &ExperimentConfig, out: &Path) -> Result<PreparedData> {
    cfg.validate()?;
    let data = prepare_data(&cfg.dataset)?;
    check_group_requirements(cfg, &data)?;
    let hash = content_hash(cfg);
    let fp = data.train.fingerprint();
    for_each_run(cfg, &data, out, |seed, cell, erm| {
        let outcome = train_cell(cfg, cell, &data.train, seed, out, erm)?;
        save_training_artifacts(
            &run_dir(out, &cell.label, seed),
            &outcome,
            &hash,
            &fp,
            true,
            None,
        )
    })?;
    Ok(data)
}

/// Selection and test evaluation over checkpoints written by [`train_all`].
pub fn evaluate_saved(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    let started = unix_now();
    let data = prepare_data(&cfg.dataset)?;
    let hash = content_hash(cfg);
    let fp = data.train.fingerprint();
    let cells = cells(cfg);
    let mut runs = Vec::new();
    for cell in &cells {
        for &seed in &cfg.seeds {
            let dir = run_dir(out, &cell.label, seed);
            let mut checkpoints = Vec::new();
            for epoch in 0..cfg.train.epochs {
                let (params, manifest) = load_checkpoint(&dir, &format!("epoch-{epoch:04}"))?;
                if manifest.config_hash != hash || manifest.dataset_fingerprint != fp {
                    return Err(Error::FingerprintMismatch {
                        expected: format!("{hash}/{fp}"),
                        actual: format!(
                            "{}/{}",
                            manifest.config_hash, manifest.dataset_fingerprint
                        ),
                    });
                }
                checkpoints.push(Checkpoint { epoch, params });
            }
            let (selected, alternative) =
                select_and_evaluate(&checkpoints, &data.val, &data.test, cfg.selection.criterion)?;
            runs.push(RunRecord {
                method: cell.label.clone(),
                params: cell.method.clone(),
                seed,
                run_seed: derive_seed(cfg.master_seed, seed),
                selected,
                alternative,
            });
        }
    }
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        criterion: cfg.selection.criterion,
        summary: summarize(&runs),
        runs,
        provenance: provenance(cfg, &data, started),
    })
}

fn check_group_requirements(cfg: &ExperimentConfig, data: &PreparedData) -> Result<()> {
    if let Some(m) = cfg.methods.iter().find(|m| m.is_group_aware()) {
        if data.train.groups().is_none() {
            return Err(Error::config(format!(
                "{} is group-aware but the training set has no group column",
                m.name()
            )));
        }
    }
    if data.test.groups().is_none() {
        return Err(Error::config(
            "the test set needs group labels for worst-group evaluation",
        ));
    }
    if cfg.selection.criterion == SelectionCriterion::WorstGroup && data.val.groups().is_none() {
        return Err(Error::config(
            "worst_group selection needs validation group labels; use criterion = \"average\"",
        ));
    }
    Ok(())
}

/// The full experiment: per seed, phase A (when configured) then every
/// method, checkpoint selection on the validation split and test
/// evaluation; aggregated over seeds. Writes the uncertainty artifacts,
/// per-run logs and selected checkpoints under `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    let started = unix_now();
    let data = prepare_data(&cfg.dataset)?;
    check_group_requirements(cfg, &data)?;
    let hash = content_hash(cfg);
    let fp = data.train.fingerprint();
    let runs = for_each_run(cfg, &data, out, |seed, cell, erm| {
        let outcome = train_cell(cfg, cell, &data.train, seed, out, erm)?;
        let (selected, alternative) = select_and_evaluate(
            &outcome.checkpoints,
            &data.val,
            &data.test,
            cfg.selection.criterion,
        )?;
        save_training_artifacts(
            &run_dir(out, &cell.label, seed),
            &outcome,
            &hash,
            &fp,
            cfg.save_all_checkpoints,
            Some(selected.epoch),
        )?;
        Ok(RunRecord {
            method: cell.label.clone(),
            params: cell.method.clone(),
            seed,
            run_seed: derive_seed(cfg.master_seed, seed),
            selected,
            alternative,
        })
    })?;
    let result = ExperimentResult {
        name: cfg.name.clone(),
        criterion: cfg.selection.criterion,
        summary: summarize(&runs),
        runs,
        provenance: provenance(cfg, &data, started),
    };
    write_json(&out.join("result.json"), &result)?;
    Ok(result)
}

/// Phase A alone for every seed.
pub fn weights_all(cfg: &ExperimentConfig, out: &Path) -> Result<PreparedData> {
    cfg.validate()?;
    if cfg.uncertainty.is_none() {
        return Err(Error::config(
            "computing weights needs an [uncertainty] section",
        ));
    }
    let data = prepare_data(&cfg.dataset)?;
    worker_pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| uncertainty_phase(cfg, &data.train, s, out).map(|_| ()))
            .collect::<Result<Vec<()>>>()
    })?;
    Ok(data)
}
