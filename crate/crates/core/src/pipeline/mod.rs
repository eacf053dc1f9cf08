//! Experiment configuration, the two-phase runner and report emission.

mod checkpoint;
mod config;
mod report;
mod run;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointManifest,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{
    CsvData, DatasetConfig, ExperimentConfig, FourMoonsData, MethodConfig, SelectionConfig,
    TheoryConfig, UncertaintyConfig, METHOD_NAMES,
};
pub use report::{emit_report, load_result, markdown_table, percent_pm, runs_csv, ReportFormat};
pub use run::{
    cells, evaluate_saved, mean_std, prepare_data, run_dir, run_pipeline, seed_dir,
    select_and_evaluate, summarize, train_all, train_cell, uncertainty_phase, weights_all,
    worker_pool, Cell, ExperimentResult, MethodSummary, PreparedData, Provenance, RunRecord,
    SelectedReport, WORKERS_ENV,
};
