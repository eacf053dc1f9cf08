use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::ExperimentResult;
use crate::error::Result;
use crate::io::{write_atomic, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

/// `0.637, 0.019` → `63.7 ± 1.9%`.
pub fn percent_pm(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}%", 100.0 * mean, 100.0 * std)
}

/// Rows = methods, columns = average and worst-group test accuracy.
pub fn markdown_table(result: &ExperimentResult) -> String {
    let mut s = String::from("| Method | Avg. | Worst |\n|---|---|---|\n");
    for m in &result.summary {
        s.push_str(&format!(
            "| {} | {} | {} |\n",
            m.method,
            percent_pm(m.avg_mean, m.avg_std),
            percent_pm(m.worst_mean, m.worst_std)
        ));
    }
    s
}

/// One row per (method, seed).
pub fn runs_csv(result: &ExperimentResult) -> String {
    let groups = result
        .runs
        .first()
        .map(|r| r.selected.test.per_group_acc.len())
        .unwrap_or(0);
    let mut s = String::from("method,seed,run_seed,criterion,epoch,avg_acc,worst_acc,worst_group");
    for g in 0..groups {
        s.push_str(&format!(",acc_g{g}"));
    }
    s.push('\n');
    for r in &result.runs {
        let t = &r.selected.test;
        let criterion = serde_json::to_value(r.selected.criterion)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{}",
            r.method,
            r.seed,
            r.run_seed,
            criterion,
            r.selected.epoch,
            t.avg_acc,
            t.worst_acc,
            t.worst_group
        ));
        for a in &t.per_group_acc {
            s.push_str(&format!(",{a:?}"));
        }
        s.push('\n');
    }
    s
}

/// Writes the report in `format` under `dir`; returns the file written.
pub fn emit_report(result: &ExperimentResult, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    let path = match format {
        ReportFormat::Json => {
            let p = dir.join("result.json");
            write_json(&p, result)?;
            p
        }
        ReportFormat::Csv => {
            let p = dir.join("runs.csv");
            write_atomic(&p, runs_csv(result).as_bytes())?;
            p
        }
        ReportFormat::Markdown => {
            let p = dir.join("report.md");
            let text = format!("# {}\n\n{}", result.name, markdown_table(result));
            write_atomic(&p, text.as_bytes())?;
            p
        }
    };
    Ok(path)
}

pub fn load_result(path: &Path) -> Result<ExperimentResult> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_style_formatting() {
        assert_eq!(percent_pm(0.637, 0.019), "63.7 ± 1.9%");
        assert_eq!(percent_pm(1.0, 0.0), "100.0 ± 0.0%");
    }
}
