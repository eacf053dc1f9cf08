//! CSV layout: header `f0,…,f{d-1},label[,group]`, one sample per row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupColumn {
    Required,
    Optional,
    Absent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub num_classes: usize,
    #[serde(default = "default_groups")]
    pub groups: GroupColumn,
    /// Defaults to `max(group) + 1`.
    #[serde(default)]
    pub num_groups: Option<usize>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_groups() -> GroupColumn {
    GroupColumn::Optional
}

fn default_split() -> Split {
    Split::Train
}

impl CsvSchema {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            groups: GroupColumn::Optional,
            num_groups: None,
            split: Split::Train,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let csv_err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();

    let mut feature_cols = Vec::new();
    let mut label_col = None;
    let mut group_col = None;
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        match name {
            "label" => label_col = Some(i),
            "group" => group_col = Some(i),
            _ => match name.strip_prefix('f').and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k == feature_cols.len() => feature_cols.push(i),
                _ => return Err(csv_err(1, format!("unexpected column `{name}`"))),
            },
        }
    }
    let label_col = label_col.ok_or_else(|| csv_err(1, "missing `label` column".into()))?;
    if feature_cols.is_empty() {
        return Err(csv_err(1, "no feature columns `f0..`".into()));
    }
    let group_col = match (schema.groups, group_col) {
        (GroupColumn::Required, None) => {
            return Err(csv_err(1, "missing required `group` column".into()))
        }
        (GroupColumn::Absent, _) => None,
        (_, g) => g,
    };

    let d = feature_cols.len();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx as u64 + 2;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(csv_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for &c in &feature_cols {
            let v: f64 = record[c]
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("bad number `{}`", &record[c])))?;
            if !v.is_finite() {
                return Err(csv_err(
                    line,
                    format!("non-finite feature `{}`", &record[c]),
                ));
            }
            features.push(v);
        }
        let y: usize = record[label_col]
            .trim()
            .parse()
            .map_err(|_| csv_err(line, format!("bad label `{}`", &record[label_col])))?;
        if y >= schema.num_classes {
            return Err(csv_err(
                line,
                format!("label {y} out of range for {} classes", schema.num_classes),
            ));
        }
        labels.push(y);
        if let Some(gc) = group_col {
            let g: usize = record[gc]
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("bad group `{}`", &record[gc])))?;
            if let Some(ng) = schema.num_groups {
                if g >= ng {
                    return Err(csv_err(
                        line,
                        format!("group {g} out of range for {ng} groups"),
                    ));
                }
            }
            groups.push(g);
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    if labels.is_empty() {
        return Err(Error::EmptyDataset(name));
    }
    let (groups, num_groups) = match group_col {
        Some(_) => {
            let ng = schema
                .num_groups
                .unwrap_or_else(|| groups.iter().max().map_or(0, |m| m + 1));
            (Some(groups), ng)
        }
        None => (None, 0),
    };
    Dataset::new(
        name,
        schema.split,
        d,
        features,
        labels,
        groups,
        schema.num_classes,
        num_groups,
    )
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    if data.groups().is_some() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for i in 0..data.len() {
        // `{:?}` prints the shortest representation that parses back exactly
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(data.label(i).to_string());
        if let Some(g) = data.groups() {
            rec.push(g[i].to_string());
        }
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
