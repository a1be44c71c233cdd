use std::time::Instant;

use fastretrain::config::TrainConfig;
use fastretrain::linalg::{ridge_solve, MemProbe, RlsState};
use fastretrain::network::{sgd_epoch, Net, SgdState};
use fastretrain::scheduler::{plan_epoch, FreezePlan};
use fastretrain::{Error, Mat, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRow {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub batch: usize,
    pub reg_c: f64,
    pub oneshot_peak_bytes: usize,
    pub rls_peak_bytes: usize,
    /// `rls_peak_bytes / oneshot_peak_bytes`.
    pub ratio: f64,
    /// Relative Frobenius difference between the two solutions.
    pub divergence: f64,
    pub oneshot_ms: f64,
    pub rls_ms: f64,
}

/// Rows `rows` of the benchmark problem. Each row has its own ChaCha stream,
/// so any chunking of the same rows sees identical values.
fn problem_rows(rows: std::ops::Range<usize>, d: usize, c: usize, seed: u64) -> (Mat, Mat) {
    let n = rows.len();
    let mut h = Vec::with_capacity(n * d);
    let mut e = Vec::with_capacity(n * c);
    for i in rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        h.extend((0..d).map(|_| rng.random_range(-1.0..1.0)));
        e.extend((0..c).map(|_| rng.random_range(-1.0..1.0)));
    }
    (
        Mat::from_vec(n, d, h).expect("sized above"),
        Mat::from_vec(n, c, e).expect("sized above"),
    )
}

/// One-shot ridge solve on the fully materialized problem against the
/// batch-by-batch recursion that only ever holds one chunk of rows.
pub fn bench_memory(n: usize, d: usize, c: usize, batches: &[usize], reg_c: f64, seed: u64) -> Result<Vec<MemoryRow>> {
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::InvalidArgument("N, d and c must be positive".into()));
    }
    if let Some(&b) = batches.iter().find(|&&b| b == 0 || b > n) {
        return Err(Error::InvalidArgument(format!("batch size {b} is not in [1, N = {n}]")));
    }
    let started = Instant::now();
    let (eta_one, one_peak) = {
        let probe = MemProbe::start();
        let (h, e) = problem_rows(0..n, d, c, seed);
        let eta = ridge_solve(&h, &e, reg_c)?;
        (eta, probe.peak_bytes())
    };
    let oneshot_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut out = Vec::with_capacity(batches.len());
    for &b in batches {
        let started = Instant::now();
        let (eta, peak) = {
            let probe = MemProbe::start();
            let mut state: Option<RlsState> = None;
            for start in (0..n).step_by(b) {
                let (h, e) = problem_rows(start..(start + b).min(n), d, c, seed);
                match &mut state {
                    None => state = Some(RlsState::init(&h, &e, reg_c)?),
                    Some(s) => s.update(&h, &e)?,
                }
            }
            (state.expect("n > 0").into_eta(), probe.peak_bytes())
        };
        out.push(MemoryRow {
            n,
            d,
            c,
            batch: b,
            reg_c,
            oneshot_peak_bytes: one_peak,
            rls_peak_bytes: peak,
            ratio: peak as f64 / one_peak as f64,
            divergence: eta.rel_diff(&eta_one),
            oneshot_ms,
            rls_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FreezeRow {
    pub rate: f64,
    pub l_a: usize,
    pub l_c: usize,
    pub epochs: usize,
    pub median_epoch_ms: f64,
    pub mean_epoch_ms: f64,
    /// Mean backward FLOP estimate per epoch.
    pub backward_flops: f64,
    /// `backward_flops` over the all-layers-active estimate.
    pub flops_ratio: f64,
    /// Frozen conv layers came out of every epoch bit-identical.
    pub frozen_intact: bool,
    pub final_loss: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// SGD epochs (no retraining) at each constant activation rate, every rate
/// starting from the same initial network.
pub fn bench_freeze(cfg: &TrainConfig, rates: &[f64], epochs: usize) -> Result<Vec<FreezeRow>> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("at least one epoch is needed".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("rate {r} is outside [0, 1]")));
    }
    let (train, _) = cfg.load_data()?;
    let init = Net::build(
        cfg.arch,
        train.shape(),
        train.num_classes(),
        cfg.retrain.dropout_rate,
        cfg.seed,
    )?;
    let l_c = init.conv.len();
    let n_batches = train.len().div_ceil(cfg.sgd.mini_batch);
    let mut full_flops = 0u64;
    for k in 0..n_batches {
        let b = cfg.sgd.mini_batch.min(train.len() - k * cfg.sgd.mini_batch);
        full_flops += init.backward_flop_estimate(&FreezePlan::all_active(l_c, 0), b)?;
    }

    let mut out = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut net = init.clone();
        let mut state = SgdState::default();
        let mut times = Vec::with_capacity(epochs);
        let mut flops = 0u64;
        let mut intact = true;
        let mut loss = f64::NAN;
        let mut l_a = 0;
        for epoch in 0..epochs {
            let plan = if l_c == 0 {
                FreezePlan::all_active(0, epoch)
            } else {
                plan_epoch(l_c, rate, cfg.seed, epoch)?
            };
            l_a = plan.l_a;
            let frozen: Vec<_> = (0..l_c)
                .filter(|&l| !plan.is_active(l))
                .map(|l| net.conv[l].clone())
                .collect();
            let stats = sgd_epoch(&mut net, &train, &cfg.sgd, &plan, &mut state)?;
            let after = (0..l_c).filter(|&l| !plan.is_active(l)).map(|l| &net.conv[l]);
            intact &= frozen.iter().zip(after).all(|(a, b)| {
                a.kernels
                    .iter()
                    .zip(&b.kernels)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias.iter().zip(&b.bias).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            times.push(stats.duration_ms);
            flops += stats.backward_flops;
            loss = stats.loss;
        }
        let mean = times.iter().sum::<f64>() / epochs as f64;
        let per_epoch = flops as f64 / epochs as f64;
        out.push(FreezeRow {
            rate,
            l_a,
            l_c,
            epochs,
            median_epoch_ms: median(&mut times),
            mean_epoch_ms: mean,
            backward_flops: per_epoch,
            flops_ratio: per_epoch / full_flops as f64,
            frozen_intact: intact,
            final_loss: loss,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_rows_are_chunking_invariant() {
        let (h, e) = problem_rows(0..10, 3, 2, 9);
        let (h2, e2) = problem_rows(4..7, 3, 2, 9);
        assert_eq!(h.slice_rows(4..7), h2);
        assert_eq!(e.slice_rows(4..7), e2);
    }

    #[test]
    fn single_batch_matches_one_shot_footprint_order() {
        let rows = bench_memory(200, 8, 2, &[200, 20], 4.0, 1).unwrap();
        assert!(rows.iter().all(|r| r.divergence <= 1e-8));
        assert!(rows[0].ratio > 0.5);
        assert!(rows[1].ratio < rows[0].ratio);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
