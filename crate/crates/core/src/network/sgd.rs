use std::fmt;
use std::time::Instant;

use super::{softmax_ce, Mode, Net};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::scheduler::{parse_pairs, FreezePlan};

/// Step schedule of learning rates keyed by fraction of the run, e.g. `0:0.1,0.5:0.01`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    milestones: Vec<(f64, f64)>,
    total_epochs: usize,
}

impl LrSchedule {
    pub fn new(milestones: Vec<(f64, f64)>, total_epochs: usize) -> Result<LrSchedule> {
        if milestones.first().map(|m| m.0) != Some(0.0) {
            return Err(Error::config("sgd.lr", "first milestone must be at fraction 0"));
        }
        if milestones.windows(2).any(|w| !(w[1].0 > w[0].0)) || milestones.iter().any(|m| m.0 > 1.0) {
            return Err(Error::config(
                "sgd.lr",
                "fractions must increase strictly within [0, 1]",
            ));
        }
        if let Some((_, lr)) = milestones.iter().find(|m| !(m.1 > 0.0)) {
            return Err(Error::config("sgd.lr", format!("learning rate {lr} is not positive")));
        }
        if total_epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(LrSchedule {
            milestones,
            total_epochs,
        })
    }

    pub fn constant(lr: f64, total_epochs: usize) -> Result<LrSchedule> {
        LrSchedule::new(vec![(0.0, lr)], total_epochs)
    }

    pub fn parse(text: &str, total_epochs: usize) -> Result<LrSchedule> {
        LrSchedule::new(parse_pairs("sgd.lr", text)?, total_epochs)
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        let mut lr = self.milestones[0].1;
        for &(f, v) in &self.milestones {
            if f * self.total_epochs as f64 <= epoch as f64 + 1e-9 {
                lr = v;
            }
        }
        lr
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.milestones.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: LrSchedule,
    pub momentum: f64,
    pub mini_batch: usize,
    pub seed: u64,
}

/// Momentum buffers and the running step count, carried across epochs.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss.
    pub loss: f64,
    /// Training accuracy accumulated over the epoch's mini-batches.
    pub accuracy: f64,
    pub steps: usize,
    pub duration_ms: f64,
    pub backward_flops: u64,
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 32 | batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One pass of mini-batch SGD over `data`.
///
/// Conv layers outside `plan.active_layers` get neither gradients nor updates;
/// every dense layer is trained.
pub fn sgd_epoch(
    net: &mut Net,
    data: &Dataset,
    cfg: &SgdConfig,
    plan: &FreezePlan,
    state: &mut SgdState,
) -> Result<SgdStats> {
    if data.feature_dim() != net.input_dim() {
        return Err(Error::dims("sgd_epoch", net.input_dim(), data.feature_dim()));
    }
    let started = Instant::now();
    let epoch = plan.epoch;
    let lr = cfg.lr.rate_at(epoch);
    if state.velocity.is_empty() {
        state.velocity = net.param_groups().iter().map(|g| vec![0.0; g.len()]).collect();
    }
    let order = batches(data, cfg.mini_batch, cfg.seed, epoch)?;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut flops = 0u64;
    let mut steps = 0;
    for (k, idx) in order.iter().enumerate() {
        let x = data.feature_rows(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let mode = Mode::Train {
            dropout_seed: batch_seed(cfg.seed, epoch, k),
        };
        let g = net.loss_and_gradients(&x, &labels, plan, mode)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: k,
                loss: g.loss,
            });
        }
        loss_sum += g.loss;
        correct += g.correct;
        flops += g.backward_flops;
        steps += 1;
        let grads = g.grads.groups();
        for ((p, v), grad) in net.param_groups_mut().into_iter().zip(&mut state.velocity).zip(grads) {
            let Some(grad) = grad else { continue };
            if cfg.momentum > 0.0 {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(grad) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            } else {
                for (p, g) in p.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
        }
    }
    state.steps += steps;
    Ok(SgdStats {
        epoch,
        lr,
        loss: loss_sum / steps as f64,
        accuracy: correct as f64 / data.len() as f64,
        steps,
        duration_ms: started.elapsed().as_secs_f64() * 1e3,
        backward_flops: flops,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean softmax cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    /// `‖T − Z‖_F` between one-hot targets and logits.
    pub residual: f64,
}

/// Evaluation-mode loss and accuracy over a whole dataset, in chunks of `chunk` rows.
pub fn evaluate(net: &Net, data: &Dataset, chunk: usize) -> Result<Evaluation> {
    if chunk == 0 {
        return Err(Error::InvalidArgument("evaluation chunk must be at least 1".into()));
    }
    if data.num_classes() > net.num_classes() {
        return Err(Error::InvalidDataset(format!(
            "{} classes in data, network predicts {}",
            data.num_classes(),
            net.num_classes()
        )));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut residual_sq = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let logits = net.forward(&data.feature_range(start..end), Mode::Eval, false)?.logits;
        let (l, c, _) = softmax_ce(&logits, &data.labels()[start..end]);
        loss += l * (end - start) as f64;
        correct += c;
        residual_sq += data.one_hot_range(start..end).sub(&logits).frobenius_norm_sq();
        start = end;
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        residual: residual_sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Arch;
    use crate::data::{gen_synthetic, SyntheticKind};

    #[test]
    fn lr_schedule_steps() {
        let s = LrSchedule::parse("0:0.1,0.5:0.01", 4).unwrap();
        assert_eq!(
            (0..4).map(|e| s.rate_at(e)).collect::<Vec<_>>(),
            vec![0.1, 0.1, 0.01, 0.01]
        );
        assert!(LrSchedule::parse("0:0", 4).is_err());
        assert!(LrSchedule::parse("0.5:0.1", 4).is_err());
    }

    #[test]
    fn full_freeze_leaves_conv_untouched() {
        let ds = gen_synthetic(SyntheticKind::Blobs, 8, 2, 0.1, 1).unwrap();
        let feats: Vec<f32> = ds.labels().iter().flat_map(|&l| vec![l as f32 * 0.5; 64]).collect();
        let img = Dataset::new("img", feats, [1, 8, 8], ds.labels().to_vec(), 2).unwrap();
        let mut net = Net::build(Arch::CnnS, [1, 8, 8], 2, 0.0, 3).unwrap();
        let before = net.clone();
        let cfg = SgdConfig {
            lr: LrSchedule::constant(0.05, 1).unwrap(),
            momentum: 0.9,
            mini_batch: 4,
            seed: 1,
        };
        let plan = FreezePlan {
            epoch: 0,
            active_layers: Default::default(),
            l_a: 0,
            l_i: 3,
        };
        sgd_epoch(&mut net, &img, &cfg, &plan, &mut SgdState::default()).unwrap();
        assert_eq!(net.conv, before.conv);
        assert_ne!(net.dense, before.dense);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = gen_synthetic(SyntheticKind::Blobs, 20, 3, 0.1, 1).unwrap();
        let mut net = Net::build(Arch::Mlp, [1, 1, 2], 3, 0.0, 1).unwrap();
        let cfg = SgdConfig {
            lr: LrSchedule::constant(1e200, 1).unwrap(),
            momentum: 0.0,
            mini_batch: 8,
            seed: 1,
        };
        let plan = FreezePlan::all_active(0, 0);
        let mut state = SgdState::default();
        let r = (0..3).try_for_each(|_| sgd_epoch(&mut net, &ds, &cfg, &plan, &mut state).map(|_| ()));
        assert!(matches!(r, Err(Error::Divergence { epoch: 0, .. })));
    }

    #[test]
    fn sgd_reduces_loss_on_blobs() {
        let ds = gen_synthetic(SyntheticKind::Blobs, 50, 3, 0.1, 2).unwrap();
        let mut net = Net::build(Arch::Mlp, [1, 1, 2], 3, 0.0, 5).unwrap();
        let before = evaluate(&net, &ds, 64).unwrap();
        let cfg = SgdConfig {
            lr: LrSchedule::constant(0.1, 5).unwrap(),
            momentum: 0.5,
            mini_batch: 16,
            seed: 2,
        };
        let mut state = SgdState::default();
        for e in 0..5 {
            sgd_epoch(&mut net, &ds, &cfg, &FreezePlan::all_active(0, e), &mut state).unwrap();
        }
        let after = evaluate(&net, &ds, 64).unwrap();
        assert!(after.loss < before.loss);
        assert!(after.accuracy > 0.9);
        assert_eq!(state.steps, 5 * 10);
    }
}
