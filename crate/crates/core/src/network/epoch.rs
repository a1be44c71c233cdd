use std::time::Instant;

use serde::Serialize;

use super::{evaluate, sgd_epoch, softmax_ce, Evaluation, Mode, Net, SgdState};
use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::Mat;
use crate::retrain::{retrain_dense_stack, CapturedFeatures, RetrainReport};
use crate::scheduler::{plan_epoch, FreezePlan};

const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralEpochReport {
    pub epoch: usize,
    pub r_a: f64,
    pub l_a: usize,
    pub l_i: usize,
    pub lr: f64,
    /// SGD steps taken so far in the run.
    pub steps: usize,
    /// Mean mini-batch loss seen during SGD.
    pub sgd_loss: f64,
    pub backward_flops: u64,
    /// Training-set cross-entropy, accuracy and least-squares residual
    /// `‖T − Z‖_F` (evaluation mode) after SGD alone.
    pub step1_loss: f64,
    pub step1_accuracy: f64,
    pub step1_residual: f64,
    /// The same after the whole epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_residual: f64,
    pub test_accuracy: Option<f64>,
    pub step1_ms: f64,
    pub step2_ms: f64,
    pub peak_bytes: usize,
    pub retrain: Option<RetrainReport>,
}

/// Evaluation-mode pass over `data` in chunks, returning every dense layer's
/// augmented input stacked over the whole set, plus the logits.
fn capture(net: &Net, data: &Dataset, chunk: usize) -> Result<(Vec<Mat>, Mat)> {
    let mut per_layer: Vec<Vec<Mat>> = vec![Vec::new(); net.dense.len()];
    let mut logits = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let out = net.forward(&data.feature_range(start..end), Mode::Eval, true)?;
        for (dst, m) in per_layer.iter_mut().zip(out.captured.expect("capture requested")) {
            dst.push(m);
        }
        logits.push(out.logits);
        start = end;
    }
    let layers = per_layer
        .iter()
        .map(|parts| Mat::vstack(parts))
        .collect::<Result<Vec<_>>>()?;
    Ok((layers, Mat::vstack(&logits)?))
}

fn summarize(logits: &Mat, targets: &Mat, labels: &[usize]) -> Evaluation {
    let (loss, correct, _) = softmax_ce(logits, labels);
    Evaluation {
        loss,
        accuracy: correct as f64 / labels.len() as f64,
        residual: targets.sub(logits).frobenius_norm(),
    }
}

/// One general epoch: SGD under the epoch's freeze plan, then (if enabled) a
/// capture pass and a retraining pass over the dense stack.
pub fn general_epoch(
    net: &mut Net,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    epoch: usize,
    state: &mut SgdState,
) -> Result<GeneralEpochReport> {
    let l_c = net.conv.len();
    let r_a = cfg.ra_schedule.rate_at(epoch)?;
    let plan = if l_c == 0 {
        FreezePlan::all_active(0, epoch)
    } else {
        plan_epoch(l_c, r_a, cfg.seed, epoch)?
    };
    let sgd = sgd_epoch(net, train, &cfg.sgd, &plan, state)?;

    let (step1, after, step2_ms, peak_bytes, retrain) = if cfg.retrain.enabled {
        let started = Instant::now();
        let (layers, logits) = capture(net, train, cfg.retrain.mp_batch_size)?;
        let source = CapturedFeatures::new(layers)?;
        let targets = train.one_hot_range(0..train.len());
        let (updated, report) = retrain_dense_stack(&net.dense, &source, &targets, &cfg.retrain_config(epoch))?;
        net.dense = updated;
        let step2_ms = started.elapsed().as_secs_f64() * 1e3;

        let logits_after = net.dense_forward(0, source.layer(0))?;
        let peak = report.peak_bytes;
        (
            summarize(&logits, &targets, train.labels()),
            summarize(&logits_after, &targets, train.labels()),
            step2_ms,
            peak,
            Some(report),
        )
    } else {
        let e = evaluate(net, train, EVAL_CHUNK)?;
        (e, e, 0.0, 0, None)
    };

    let test_accuracy = test
        .map(|t| evaluate(net, t, EVAL_CHUNK))
        .transpose()?
        .map(|e| e.accuracy);
    Ok(GeneralEpochReport {
        epoch,
        r_a,
        l_a: plan.l_a,
        l_i: plan.l_i,
        lr: sgd.lr,
        steps: state.steps,
        sgd_loss: sgd.loss,
        backward_flops: sgd.backward_flops,
        step1_loss: step1.loss,
        step1_accuracy: step1.accuracy,
        step1_residual: step1.residual,
        train_loss: after.loss,
        train_accuracy: after.accuracy,
        train_residual: after.residual,
        test_accuracy,
        step1_ms: sgd.duration_ms,
        step2_ms,
        peak_bytes,
        retrain,
    })
}
