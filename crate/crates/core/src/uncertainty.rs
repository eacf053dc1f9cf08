//! Training-trajectory uncertainty and the importance weights built on it.
//!
//! A sample's uncertainty is the fraction of recorded ERM epochs, inside a
//! window of `T` consecutive epochs starting at `T_s`, in which the model
//! misclassified it. Epoch ids are 0-based and the window is
//! `T_s ..= T_s + T − 1`, so `u ∈ {0, 1/T, …, 1}`. It depends only on the
//! recorded predictions and the labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::model::ModelParams;
use crate::train::{fit, predictions, TrainConfig, Weighted};

/// Predicted classes of every training sample after every recorded epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    /// `preds[e][i]`: prediction for sample `i` after epoch `epoch_ids[e]`.
    pub preds: Vec<Vec<u32>>,
    pub epoch_ids: Vec<usize>,
    pub dataset_fingerprint: String,
    pub num_samples: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl PredictionTrace {
    pub fn new(
        dataset_fingerprint: String,
        num_samples: usize,
        seed: u64,
        config_hash: String,
    ) -> Self {
        Self {
            preds: Vec::new(),
            epoch_ids: Vec::new(),
            dataset_fingerprint,
            num_samples,
            seed,
            config_hash,
        }
    }

    pub fn push(&mut self, epoch: usize, preds: Vec<u32>) -> Result<()> {
        if preds.len() != self.num_samples {
            return Err(Error::DimensionMismatch {
                expected: self.num_samples,
                got: preds.len(),
            });
        }
        if self.epoch_ids.last().is_some_and(|&last| epoch <= last) {
            return Err(Error::invalid(format!(
                "trace epochs must increase; {epoch} after {:?}",
                self.epoch_ids.last()
            )));
        }
        self.epoch_ids.push(epoch);
        self.preds.push(preds);
        Ok(())
    }

    pub fn num_epochs(&self) -> usize {
        self.preds.len()
    }

    /// Rows `(epoch id, predictions)` of the window `start .. start + len`.
    fn window(&self, start: usize, len: usize) -> Result<Vec<&[u32]>> {
        let end = start + len;
        let rows: Vec<&[u32]> = self
            .epoch_ids
            .iter()
            .zip(&self.preds)
            .filter(|(&e, _)| e >= start && e < end)
            .map(|(_, p)| p.as_slice())
            .collect();
        if rows.len() != len {
            return Err(Error::WindowOutOfRange {
                start,
                end,
                available: self.num_epochs(),
            });
        }
        Ok(rows)
    }

    /// CSV body: one row per epoch, one column per sample.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.preds {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &TraceSidecar {
                epoch_ids: self.epoch_ids.clone(),
                dataset_fingerprint: self.dataset_fingerprint.clone(),
                num_samples: self.num_samples,
                seed: self.seed,
                config_hash: self.config_hash.clone(),
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let side: TraceSidecar = serde_json::from_slice(&std::fs::read(&json_path)?)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let body = std::fs::read_to_string(&csv_path)?;
        let mut preds = Vec::new();
        for (k, line) in body.lines().enumerate() {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Csv {
                    path: csv_path.clone(),
                    line: k as u64 + 1,
                    message: e.to_string(),
                })?;
            if row.len() != side.num_samples {
                return Err(Error::Csv {
                    path: csv_path.clone(),
                    line: k as u64 + 1,
                    message: format!(
                        "expected {} predictions, found {}",
                        side.num_samples,
                        row.len()
                    ),
                });
            }
            preds.push(row);
        }
        if preds.len() != side.epoch_ids.len() {
            return Err(Error::Artifact {
                path: csv_path,
                message: format!(
                    "{} rows but {} epoch ids",
                    preds.len(),
                    side.epoch_ids.len()
                ),
            });
        }
        Ok(Self {
            preds,
            epoch_ids: side.epoch_ids,
            dataset_fingerprint: side.dataset_fingerprint,
            num_samples: side.num_samples,
            seed: side.seed,
            config_hash: side.config_hash,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TraceSidecar {
    epoch_ids: Vec<usize>,
    dataset_fingerprint: String,
    num_samples: usize,
    seed: u64,
    config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    pub u: Vec<f64>,
    /// `(T_s, T)`.
    pub window: (usize, usize),
    pub dataset_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub eta: f64,
    pub c: f64,
    pub window: (usize, usize),
    pub dataset_fingerprint: String,
}

impl ImportanceWeights {
    /// Rejects weights computed on a different dataset.
    pub fn check_binding(&self, data: &Dataset) -> Result<()> {
        let actual = data.fingerprint();
        if actual != self.dataset_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.dataset_fingerprint.clone(),
                actual,
            });
        }
        if self.w.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: self.w.len(),
            });
        }
        Ok(())
    }

    /// Writes `<stem>.csv` (`index,u,w`) and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut s = String::from("index,u,w\n");
        for (i, (u, w)) in self.u.iter().zip(&self.w).enumerate() {
            s.push_str(&format!("{i},{u:?},{w:?}\n"));
        }
        write_atomic(&dir.join(format!("{stem}.csv")), s.as_bytes())?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &WeightsSidecar {
                eta: self.eta,
                c: self.c,
                t_s: self.window.0,
                t: self.window.1,
                dataset_fingerprint: self.dataset_fingerprint.clone(),
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side: WeightsSidecar =
            serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Csv {
            path: csv_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        let (mut u, mut w) = (Vec::new(), Vec::new());
        for (k, rec) in reader.deserialize::<(usize, f64, f64)>().enumerate() {
            let (idx, ui, wi) = rec.map_err(|e| Error::Csv {
                path: csv_path.clone(),
                line: k as u64 + 2,
                message: e.to_string(),
            })?;
            if idx != k {
                return Err(Error::Csv {
                    path: csv_path.clone(),
                    line: k as u64 + 2,
                    message: format!("expected index {k}, found {idx}"),
                });
            }
            u.push(ui);
            w.push(wi);
        }
        Ok(Self {
            u,
            w,
            eta: side.eta,
            c: side.c,
            window: (side.t_s, side.t),
            dataset_fingerprint: side.dataset_fingerprint,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsSidecar {
    eta: f64,
    c: f64,
    t_s: usize,
    t: usize,
    dataset_fingerprint: String,
}

/// Plain ERM that records training-set predictions after every epoch.
/// Requires `cfg.epochs ≥ start_epoch + window`.
pub fn train_erm_with_trace(
    data: &Dataset,
    cfg: &TrainConfig,
    start_epoch: usize,
    window: usize,
) -> Result<(ModelParams, PredictionTrace)> {
    if window == 0 {
        return Err(Error::config("the uncertainty window T must be at least 1"));
    }
    if cfg.epochs < start_epoch + window {
        return Err(Error::config(format!(
            "ERM for uncertainty needs epochs ≥ T_s + T = {}, got {}",
            start_epoch + window,
            cfg.epochs
        )));
    }
    let out = fit(data, cfg, &mut Weighted::default())?;
    Ok((out.params, out.trace))
}

/// `u_i = (1/T) Σ_{t = T_s}^{T_s + T − 1} [pred_t(i) ≠ y_i]`.
pub fn compute_uncertainty(
    trace: &PredictionTrace,
    labels: &[usize],
    start_epoch: usize,
    window: usize,
) -> Result<UncertaintyScores> {
    if window == 0 {
        return Err(Error::invalid(
            "the uncertainty window T must be at least 1",
        ));
    }
    if labels.len() != trace.num_samples {
        return Err(Error::DimensionMismatch {
            expected: trace.num_samples,
            got: labels.len(),
        });
    }
    let rows = trace.window(start_epoch, window)?;
    let mut wrong = vec![0u32; labels.len()];
    for row in rows {
        for ((count, &p), &y) in wrong.iter_mut().zip(row).zip(labels) {
            if p as usize != y {
                *count += 1;
            }
        }
    }
    Ok(UncertaintyScores {
        u: wrong
            .iter()
            .map(|&k| f64::from(k) / window as f64)
            .collect(),
        window: (start_epoch, window),
        dataset_fingerprint: trace.dataset_fingerprint.clone(),
    })
}

/// `w_i = η·u_i + c`.
pub fn compute_weights(scores: &UncertaintyScores, eta: f64, c: f64) -> Result<ImportanceWeights> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!(
            "eta must be nonnegative, got {eta}"
        )));
    }
    Ok(ImportanceWeights {
        w: scores.u.iter().map(|&u| eta * u + c).collect(),
        u: scores.u.clone(),
        eta,
        c,
        window: scores.window,
        dataset_fingerprint: scores.dataset_fingerprint.clone(),
    })
}

/// Ensemble alternative: `T` independent ERM models (seeds `seed .. seed+T`),
/// `u_i` = fraction of final models misclassifying sample `i`.
pub fn compute_uncertainty_ensemble(
    data: &Dataset,
    cfg: &TrainConfig,
    members: usize,
) -> Result<UncertaintyScores> {
    if members == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    let mut wrong = vec![0u32; data.len()];
    for t in 0..members {
        let member_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(t as u64),
            ..cfg.clone()
        };
        let out = fit(data, &member_cfg, &mut Weighted::default())?;
        let preds = predictions(&out.params, data)?;
        for ((count, &p), &y) in wrong.iter_mut().zip(&preds).zip(data.labels()) {
            if p as usize != y {
                *count += 1;
            }
        }
    }
    Ok(UncertaintyScores {
        u: wrong
            .iter()
            .map(|&k| f64::from(k) / members as f64)
            .collect(),
        window: (0, members),
        dataset_fingerprint: data.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(rows: Vec<Vec<u32>>) -> PredictionTrace {
        let n = rows[0].len();
        let mut t = PredictionTrace::new("fp".into(), n, 0, "h".into());
        for (e, r) in rows.into_iter().enumerate() {
            t.push(e, r).unwrap();
        }
        t
    }

    #[test]
    fn counts_over_the_window() {
        // sample 0 always right, sample 1 always wrong, sample 2 right/wrong/wrong/right
        let t = trace_of(vec![
            vec![1, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 1],
            vec![0, 0, 1],
            vec![0, 0, 0],
        ]);
        let u = compute_uncertainty(&t, &[0, 1, 0], 1, 4).unwrap();
        assert_eq!(u.u, vec![0.0, 1.0, 0.5]);
        assert_eq!(u.window, (1, 4));
    }

    #[test]
    fn window_beyond_trace_is_an_error() {
        let t = trace_of(vec![vec![0], vec![0]]);
        match compute_uncertainty(&t, &[0], 1, 2) {
            Err(Error::WindowOutOfRange {
                start: 1,
                end: 3,
                available: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(compute_uncertainty(&t, &[0], 0, 0).is_err());
    }

    #[test]
    fn weights_are_affine() {
        let s = UncertaintyScores {
            u: vec![0.0, 0.5, 1.0],
            window: (0, 2),
            dataset_fingerprint: "fp".into(),
        };
        let w = compute_weights(&s, 80.0, 1.0).unwrap();
        assert_eq!(w.w, vec![1.0, 41.0, 81.0]);
        let flat = compute_weights(&s, 0.0, 1.0).unwrap();
        assert!(flat.w.iter().all(|&v| v == 1.0));
        assert!(compute_weights(&s, 1.0, 0.0).is_err());
        assert!(compute_weights(&s, -1.0, 1.0).is_err());
    }

    #[test]
    fn trace_epochs_must_increase() {
        let mut t = PredictionTrace::new("fp".into(), 1, 0, "h".into());
        t.push(3, vec![0]).unwrap();
        assert!(t.push(3, vec![0]).is_err());
        assert!(t.push(4, vec![0, 1]).is_err());
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = trace_of(vec![vec![0, 1, 2], vec![2, 1, 0]]);
        t.save(dir.path(), "trace").unwrap();
        assert_eq!(PredictionTrace::load(dir.path(), "trace").unwrap(), t);

        let u = compute_uncertainty(&t, &[0, 1, 0], 0, 2).unwrap();
        let w = compute_weights(&u, 3.0, 1.0).unwrap();
        w.save(dir.path(), "weights").unwrap();
        assert_eq!(ImportanceWeights::load(dir.path(), "weights").unwrap(), w);
    }
}
