use std::path::Path;

use fastretrain::config::TrainConfig;
use fastretrain::{Error, Result};
use serde::Serialize;

use crate::run::train;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub config: String,
    pub seed: u64,
    /// Final test accuracy, or training accuracy when there is no test set.
    pub accuracy: f64,
    pub step1_ms: f64,
    pub step2_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub config: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every named config once per seed (runs land in
/// `out_dir/<name>/seed-<seed>`) and aggregates final accuracy per config.
pub fn compare(
    configs: &[(String, TrainConfig)],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<(Vec<CompareRow>, Vec<RunOutcome>)> {
    if configs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two configs".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut runs = Vec::with_capacity(configs.len() * seeds.len());
    for (name, cfg) in configs {
        let mut acc = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let s = train(
                &cfg.clone().with_seed(seed),
                &out_dir.join(name).join(format!("seed-{seed}")),
            )?;
            let a = s
                .final_test_accuracy
                .or(s.final_train_accuracy)
                .ok_or_else(|| Error::InvalidArgument(format!("{name} ran no epochs")))?;
            acc.push(a);
            runs.push(RunOutcome {
                config: name.clone(),
                seed,
                accuracy: a,
                step1_ms: s.totals.step1_ms,
                step2_ms: s.totals.step2_ms,
            });
        }
        let (mean, std) = mean_std(&acc);
        rows.push(CompareRow {
            config: name.clone(),
            runs: acc.len(),
            mean,
            std,
            min: acc.iter().copied().fold(f64::INFINITY, f64::min),
            max: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok((rows, runs))
}
