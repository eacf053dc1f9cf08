//! `umix-bench <subcommand> --config <path> [--out <dir>] [--seeds a,b,c]`
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 for failures
//! while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use umix::data::save_csv;
use umix::io::{write_atomic, write_json};
use umix::pipeline::{
    emit_report, evaluate_saved, load_result, markdown_table, prepare_data, run_pipeline, seed_dir,
    train_all, weights_all, worker_pool, ExperimentConfig, ReportFormat, TheoryConfig,
};
use umix::theory::{
    check_mixup_regularizer, covariance_rank, random_glm_problem, RegularizerCheck,
};
use umix::Error;

#[derive(Parser, Debug)]
#[command(
    name = "umix-bench",
    version,
    about = "Uncertainty-weighted mixup experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` from the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the train/val/test splits as CSV.
    Generate(Common),
    /// Train every method and seed, keeping all epoch checkpoints.
    Train(Common),
    /// Run the ERM trace and persist uncertainties and weights.
    Weights(Common),
    /// Select checkpoints on validation data and evaluate on test data.
    Evaluate(Common),
    /// Re-emit reports from a stored result.
    Report {
        #[command(flatten)]
        common: Common,
        /// Only this format (default: all).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Check the mixup regularizer approximation and the covariance rank.
    TheoryCheck(Common),
    /// Train, select, evaluate and report in one go.
    Sweep(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate(c)
            | Command::Train(c)
            | Command::Weights(c)
            | Command::Evaluate(c)
            | Command::TheoryCheck(c)
            | Command::Sweep(c) => c,
            Command::Report { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> umix::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn write_reports(
    result: &umix::pipeline::ExperimentResult,
    out: &Path,
    only: Option<Format>,
) -> umix::Result<()> {
    let formats = match only {
        Some(Format::Json) => vec![ReportFormat::Json],
        Some(Format::Csv) => vec![ReportFormat::Csv],
        Some(Format::Markdown) => vec![ReportFormat::Markdown],
        None => vec![
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ],
    };
    for f in formats {
        let path = emit_report(result, f, out)?;
        eprintln!("wrote {}", path.display());
    }
    print!("{}", markdown_table(result));
    Ok(())
}

#[derive(Serialize)]
struct TheoryReport {
    theta: Vec<f64>,
    checks: Vec<RegularizerCheck>,
    rank: Option<umix::theory::RankReport>,
}

fn theory_check(cfg: &ExperimentConfig, out: &Path) -> umix::Result<()> {
    let t = cfg.theory.clone().unwrap_or_default();
    let TheoryConfig {
        dim,
        samples,
        theta_norm,
        alphas,
        mc_samples,
        seed,
        rank_eps,
    } = t;
    let (theta, data) = random_glm_problem(dim, samples, theta_norm, seed)?;
    let unit = vec![1.0; data.len()];
    let pool = worker_pool()?;
    let checks = pool.install(|| {
        alphas
            .iter()
            .map(|&a| check_mixup_regularizer(&theta, &data, &unit, a, a, mc_samples, seed))
            .collect::<umix::Result<Vec<_>>>()
    })?;
    println!("alpha=beta  mc_loss     approx      abs_gap     rel_gap     std_err");
    for c in &checks {
        println!(
            "{:<10}  {:<10.6}  {:<10.6}  {:<10.3e}  {:<10.3e}  {:.3e}",
            c.beta_params.0, c.mc_mixup_loss, c.approx_rhs, c.abs_gap, c.rel_gap, c.mc_std_error
        );
    }
    let prepared = prepare_data(&cfg.dataset)?;
    let rank = match prepared.train.groups() {
        Some(_) => {
            // inverse group frequency, n / (G · n_g)
            let counts = prepared.train.group_counts().unwrap_or_default();
            let nonempty = counts.iter().filter(|&&c| c > 0).count() as f64;
            let n = prepared.train.len() as f64;
            let weights: Vec<f64> = counts
                .iter()
                .map(|&c| {
                    if c == 0 {
                        0.0
                    } else {
                        n / (nonempty * c as f64)
                    }
                })
                .collect();
            let r = covariance_rank(&prepared.train, &weights, rank_eps)?;
            println!("rank(Σ_X) = {} of {}", r.rank, prepared.train.dim());
            write_atomic(&out.join("eigenvalues.csv"), r.to_csv().as_bytes())?;
            Some(r)
        }
        None => None,
    };
    write_json(
        &out.join("theory.json"),
        &TheoryReport {
            theta,
            checks,
            rank,
        },
    )
}

fn run(cli: Cli) -> umix::Result<()> {
    let (cfg, out) = load_config(cli.command.common())?;
    match &cli.command {
        Command::Generate(_) => {
            let d = prepare_data(&cfg.dataset)?;
            for (name, split) in [("train", &d.train), ("val", &d.val), ("test", &d.test)] {
                let path = out.join("data").join(format!("{name}.csv"));
                std::fs::create_dir_all(path.parent().unwrap())?;
                save_csv(split, &path)?;
                eprintln!("wrote {} ({} rows)", path.display(), split.len());
            }
        }
        Command::Weights(_) => {
            weights_all(&cfg, &out)?;
            for &s in &cfg.seeds {
                eprintln!("wrote {}", seed_dir(&out, s).join("uncertainty").display());
            }
        }
        Command::Train(_) => {
            train_all(&cfg, &out)?;
            eprintln!(
                "trained {} method(s) × {} seed(s) into {}",
                cfg.methods.len(),
                cfg.seeds.len(),
                out.display()
            );
        }
        Command::Evaluate(_) => {
            let result = evaluate_saved(&cfg, &out)?;
            write_reports(&result, &out, None)?;
        }
        Command::Report { format, .. } => {
            let result = load_result(&out.join("result.json")).map_err(|e| {
                Error::Config(format!("no readable result.json in {}: {e}", out.display()))
            })?;
            write_reports(&result, &out, *format)?;
        }
        Command::TheoryCheck(_) => theory_check(&cfg, &out)?,
        Command::Sweep(_) => {
            let result = run_pipeline(&cfg, &out)?;
            write_reports(&result, &out, None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
