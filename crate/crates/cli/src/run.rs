use std::fs;
use std::io::Write;
use std::path::Path;

use fastretrain::config::TrainConfig;
use fastretrain::network::{general_epoch, save_checkpoint, GeneralEpochReport, Net, SgdState};
use fastretrain::{Error, Result};
use serde::Serialize;

pub const SUMMARY_SCHEMA: &str = "fastretrain.summary/1";

/// One line of metrics.csv.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Cumulative SGD steps.
    pub step: usize,
    /// Training cross-entropy after the epoch.
    pub loss: f64,
    /// Test accuracy, or training accuracy when there is no test set.
    pub acc: f64,
    pub r_a: f64,
    pub l_a: usize,
    pub step1_ms: f64,
    pub step2_ms: f64,
    pub peak_bytes: usize,
}

impl MetricsRow {
    fn from_report(r: &GeneralEpochReport) -> MetricsRow {
        MetricsRow {
            epoch: r.epoch,
            step: r.steps,
            loss: r.train_loss,
            acc: r.test_accuracy.unwrap_or(r.train_accuracy),
            r_a: r.r_a,
            l_a: r.l_a,
            step1_ms: r.step1_ms,
            step2_ms: r.step2_ms,
            peak_bytes: r.peak_bytes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Totals {
    pub step1_ms: f64,
    pub step2_ms: f64,
    pub step1_ms_per_epoch: f64,
    pub step2_ms_per_epoch: f64,
    /// Largest per-epoch retraining peak.
    pub peak_bytes: usize,
    pub backward_flops: u64,
    pub steps: usize,
}

/// Contents of summary.json.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub status: RunStatus,
    pub error: Option<String>,
    pub arch: String,
    pub seed: u64,
    pub epochs: usize,
    pub retrain_enabled: bool,
    pub train_samples: usize,
    pub test_samples: Option<usize>,
    pub rows: Vec<GeneralEpochReport>,
    pub final_test_accuracy: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub totals: Totals,
}

impl RunSummary {
    fn totals(rows: &[GeneralEpochReport]) -> Totals {
        let n = rows.len().max(1) as f64;
        let step1_ms: f64 = rows.iter().map(|r| r.step1_ms).sum();
        let step2_ms: f64 = rows.iter().map(|r| r.step2_ms).sum();
        Totals {
            step1_ms,
            step2_ms,
            step1_ms_per_epoch: step1_ms / n,
            step2_ms_per_epoch: step2_ms / n,
            peak_bytes: rows.iter().map(|r| r.peak_bytes).max().unwrap_or(0),
            backward_flops: rows.iter().map(|r| r.backward_flops).sum(),
            steps: rows.last().map_or(0, |r| r.steps),
        }
    }
}

pub fn write_metrics_row<W: Write>(w: &mut csv::Writer<W>, row: &MetricsRow) -> Result<()> {
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

fn strip_timing(r: &mut GeneralEpochReport) {
    r.step1_ms = 0.0;
    r.step2_ms = 0.0;
    if let Some(rep) = &mut r.retrain {
        rep.duration_ms = 0.0;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Runs `cfg.epochs` general epochs and writes metrics.csv, summary.json,
/// model.ckpt and resolved.cfg into `out_dir`.
///
/// metrics.csv is flushed after every epoch. If an epoch fails, summary.json
/// is still written with `status = "failed"` and the error message, and the
/// error is returned.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    let (train_set, test_set) = cfg.load_data()?;
    let mut net = Net::build(
        cfg.arch,
        train_set.shape(),
        train_set.num_classes(),
        cfg.retrain.dropout_rate,
        cfg.seed,
    )?;
    cfg.retrain_config(0).reg_c_for(0, net.dense.len())?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("resolved.cfg"), cfg.to_config_string())?;
    let mut metrics = csv::Writer::from_path(out_dir.join("metrics.csv"))?;

    let mut summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        status: RunStatus::Ok,
        error: None,
        arch: cfg.arch.to_string(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        retrain_enabled: cfg.retrain.enabled,
        train_samples: train_set.len(),
        test_samples: test_set.as_ref().map(|t| t.len()),
        rows: Vec::with_capacity(cfg.epochs),
        final_test_accuracy: None,
        final_train_accuracy: None,
        totals: Totals::default(),
    };
    let mut state = SgdState::default();
    for epoch in 0..cfg.epochs {
        match general_epoch(&mut net, &train_set, test_set.as_ref(), cfg, epoch, &mut state) {
            Ok(mut report) => {
                if !cfg.timing {
                    strip_timing(&mut report);
                }
                write_metrics_row(&mut metrics, &MetricsRow::from_report(&report))?;
                summary.rows.push(report);
            }
            Err(e) => {
                summary.status = RunStatus::Failed;
                summary.error = Some(e.to_string());
                summary.totals = RunSummary::totals(&summary.rows);
                write_json(&out_dir.join("summary.json"), &summary)?;
                return Err(e);
            }
        }
    }
    let last = summary.rows.last();
    summary.final_test_accuracy = last.and_then(|r| r.test_accuracy);
    summary.final_train_accuracy = last.map(|r| r.train_accuracy);
    summary.totals = RunSummary::totals(&summary.rows);
    save_checkpoint(&net, out_dir.join("model.ckpt"))?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
