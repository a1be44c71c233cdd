//! A small feed-forward network: ReLU conv blocks with optional max pooling,
//! then a dense stack whose last layer is linear.
//!
//! Samples are rows of a [`Mat`] (flattened `channels × height × width`).
//! Everything runs in `f64`; checkpoints store `f32`.

mod checkpoint;
mod conv;
mod epoch;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::ConvLayer;
pub use epoch::{general_epoch, GeneralEpochReport};
pub use sgd::{evaluate, sgd_epoch, Evaluation, LrSchedule, SgdConfig, SgdState, SgdStats};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Arch;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat, MatRef};
use crate::retrain::{Activation, DenseLayer};
use crate::scheduler::FreezePlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    /// Max-pool window after the conv; 1 means no pooling.
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
}

/// Architecture descriptor, stored in checkpoints as text:
/// `input 1 28 28; conv 1 8 3 1 1 2; dense 288 128 relu 0; dense 128 10 linear 0`
/// (conv fields: in, out, kernel, stride, padding, pool).
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub input_shape: [usize; 3],
    pub conv: Vec<ConvSpec>,
    pub dense: Vec<DenseSpec>,
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input_shape;
        write!(f, "input {c} {h} {w}")?;
        for s in &self.conv {
            write!(
                f,
                "; conv {} {} {} {} {} {}",
                s.in_ch, s.out_ch, s.k, s.stride, s.padding, s.pool
            )?;
        }
        for s in &self.dense {
            let act = match s.activation {
                Activation::Linear => "linear",
                Activation::Relu => "relu",
            };
            write!(f, "; dense {} {} {act} {}", s.d_in, s.d_out, s.dropout_rate)?;
        }
        Ok(())
    }
}

impl FromStr for NetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<NetSpec> {
        let bad = |part: &str| Error::InvalidCheckpoint(format!("bad architecture entry `{part}`"));
        let mut input = None;
        let mut conv = Vec::new();
        let mut dense = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split_whitespace().collect();
            let nums = |n: usize| -> Result<Vec<usize>> {
                fields[1..=n].iter().map(|v| v.parse().map_err(|_| bad(part))).collect()
            };
            match (fields[0], fields.len()) {
                ("input", 4) => {
                    let v = nums(3)?;
                    input = Some([v[0], v[1], v[2]]);
                }
                ("conv", 7) => {
                    let v = nums(6)?;
                    conv.push(ConvSpec {
                        in_ch: v[0],
                        out_ch: v[1],
                        k: v[2],
                        stride: v[3],
                        padding: v[4],
                        pool: v[5],
                    });
                }
                ("dense", 5) => {
                    let v = nums(2)?;
                    let activation = match fields[3] {
                        "linear" => Activation::Linear,
                        "relu" => Activation::Relu,
                        _ => return Err(bad(part)),
                    };
                    dense.push(DenseSpec {
                        d_in: v[0],
                        d_out: v[1],
                        activation,
                        dropout_rate: fields[4].parse().map_err(|_| bad(part))?,
                    });
                }
                _ => return Err(bad(part)),
            }
        }
        Ok(NetSpec {
            input_shape: input.ok_or_else(|| Error::InvalidCheckpoint("architecture has no input".into()))?,
            conv,
            dense,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off.
    Eval,
    /// Dropout on, masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

/// Output of [`Net::forward`].
pub struct Forward {
    pub logits: Mat,
    /// Input of every dense layer with the trailing ones column, when requested.
    pub captured: Option<Vec<Mat>>,
}

/// Per-parameter-group gradients. Frozen conv layers have `None`.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// `(kernels, bias)` per conv layer.
    pub conv: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    pub dense: Vec<Mat>,
}

impl Gradients {
    /// Gradient slices in [`Net::param_groups_mut`] order.
    pub fn groups(&self) -> Vec<Option<&[f64]>> {
        let mut out = Vec::new();
        for g in &self.conv {
            match g {
                Some((k, b)) => {
                    out.push(Some(k.as_slice()));
                    out.push(Some(b.as_slice()));
                }
                None => {
                    out.push(None);
                    out.push(None);
                }
            }
        }
        out.extend(self.dense.iter().map(|m| Some(m.as_slice())));
        out
    }
}

pub struct BatchGrad {
    /// Mean softmax cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    pub grads: Gradients,
    pub backward_flops: u64,
}

struct ConvCache {
    cols: Vec<f64>,
    act: Vec<f64>,
    argmax: Vec<u32>,
    h: usize,
    w: usize,
    n: usize,
    pooled_len: usize,
}

struct Trace {
    conv: Vec<ConvCache>,
    dense_in: Vec<Mat>,
    dropout: Vec<Option<Vec<f64>>>,
    dense_out: Vec<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    input_shape: [usize; 3],
    pub conv: Vec<ConvLayer>,
    pub pools: Vec<usize>,
    pub dense: Vec<DenseLayer>,
}

/// Spatial shape after each conv block: `(h, w, oh, ow, ph, pw)`.
type BlockShape = (usize, usize, usize, usize, usize, usize);

impl Net {
    /// A zero-parameter network with the given architecture.
    pub fn from_spec(spec: &NetSpec) -> Result<Net> {
        let conv = spec
            .conv
            .iter()
            .map(|s| ConvLayer::zeros(s.in_ch, s.out_ch, s.k, s.stride, s.padding))
            .collect();
        let dense = spec
            .dense
            .iter()
            .map(|s| DenseLayer::new(Mat::zeros(s.d_in + 1, s.d_out), s.activation, s.dropout_rate))
            .collect::<Result<Vec<_>>>()?;
        let net = Net {
            input_shape: spec.input_shape,
            conv,
            pools: spec.conv.iter().map(|s| s.pool).collect(),
            dense,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            input_shape: self.input_shape,
            conv: self
                .conv
                .iter()
                .zip(&self.pools)
                .map(|(c, &pool)| ConvSpec {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    k: c.k,
                    stride: c.stride,
                    padding: c.padding,
                    pool,
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseSpec {
                    d_in: d.d_in(),
                    d_out: d.d_out(),
                    activation: d.activation,
                    dropout_rate: d.dropout_rate,
                })
                .collect(),
        }
    }

    /// One of the shipped architectures, initialized from `seed`.
    pub fn build(arch: Arch, input_shape: [usize; 3], classes: usize, dropout_rate: f64, seed: u64) -> Result<Net> {
        let input_dim: usize = input_shape.iter().product();
        let dense = |d_in: usize, d_out: usize, activation| DenseSpec {
            d_in,
            d_out,
            activation,
            dropout_rate,
        };
        let spec = match arch {
            Arch::Mlp => NetSpec {
                input_shape,
                conv: vec![],
                dense: vec![
                    dense(input_dim, 256, Activation::Relu),
                    dense(256, 128, Activation::Relu),
                    dense(128, classes, Activation::Linear),
                ],
            },
            Arch::CnnS => {
                let mut conv = Vec::new();
                let mut ch = input_shape[0];
                let (mut h, mut w) = (input_shape[1], input_shape[2]);
                for out_ch in [8, 16, 32] {
                    conv.push(ConvSpec {
                        in_ch: ch,
                        out_ch,
                        k: 3,
                        stride: 1,
                        padding: 1,
                        pool: 2,
                    });
                    ch = out_ch;
                    h /= 2;
                    w /= 2;
                }
                if h == 0 || w == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "cnn-s needs inputs of at least 8×8, got {}×{}",
                        input_shape[1], input_shape[2]
                    )));
                }
                NetSpec {
                    input_shape,
                    conv,
                    dense: vec![
                        dense(ch * h * w, 128, Activation::Relu),
                        dense(128, classes, Activation::Linear),
                    ],
                }
            }
        };
        let mut net = Net::from_spec(&spec)?;
        net.init(seed);
        Ok(net)
    }

    /// Fan-in scaled uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(&mut self, seed: u64) {
        let mut stream = 0u64;
        let mut next_rng = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            stream += 1;
            rng
        };
        for c in &mut self.conv {
            let mut rng = next_rng();
            let bound = (6.0 / c.patch_len() as f64).sqrt();
            c.kernels.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            c.bias.fill(0.0);
        }
        for d in &mut self.dense {
            let mut rng = next_rng();
            let bound = (6.0 / d.d_in() as f64).sqrt();
            let d_in = d.d_in();
            for r in 0..d_in {
                d.weights
                    .row_mut(r)
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-bound..bound));
            }
            d.weights.row_mut(d_in).fill(0.0);
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.dense.last().map_or(0, DenseLayer::d_out)
    }

    fn block_shapes(&self) -> Result<Vec<BlockShape>> {
        let (mut h, mut w) = (self.input_shape[1], self.input_shape[2]);
        let mut out = Vec::with_capacity(self.conv.len());
        for (c, &pool) in self.conv.iter().zip(&self.pools) {
            let (oh, ow) = c.out_hw(h, w)?;
            if pool == 0 || oh / pool == 0 || ow / pool == 0 {
                return Err(Error::InvalidArgument(format!("pool {pool} does not fit {oh}×{ow}")));
            }
            out.push((h, w, oh, ow, oh / pool, ow / pool));
            h = oh / pool;
            w = ow / pool;
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let mut ch = self.input_shape[0];
        for c in &self.conv {
            if c.in_ch != ch || c.out_ch == 0 || c.k == 0 {
                return Err(Error::InvalidArgument(format!(
                    "conv layer expects {} input channels, previous layer gives {ch}",
                    c.in_ch
                )));
            }
            ch = c.out_ch;
        }
        let shapes = self.block_shapes()?;
        let mut width = match shapes.last() {
            Some(&(.., ph, pw)) => ch * ph * pw,
            None => self.input_dim(),
        };
        let last = self
            .dense
            .last()
            .ok_or_else(|| Error::InvalidArgument("no dense layers".into()))?;
        if last.activation != Activation::Linear {
            return Err(Error::InvalidArgument("last dense layer must be linear".into()));
        }
        for d in &self.dense {
            if d.d_in() != width {
                return Err(Error::dims("Net dense chain", width, d.d_in()));
            }
            width = d.d_out();
        }
        Ok(())
    }

    /// Parameter groups: kernels and bias of each conv layer, then each dense weight matrix.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for d in &mut self.dense {
            out.push(d.weights.as_mut_slice());
        }
        out
    }

    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.conv {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        for d in &self.dense {
            out.push(d.weights.as_slice());
        }
        out
    }

    fn trace(&self, x: &Mat, mode: Mode, keep: bool) -> Result<Trace> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("Net::forward", self.input_dim(), x.cols()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "Net::forward" });
        }
        let b = x.rows();
        let shapes = self.block_shapes()?;
        let mut cur: Vec<f64> = x.as_slice().to_vec();
        let mut caches = Vec::new();
        for ((c, &pool), &(h, w, oh, ow, ph, pw)) in self.conv.iter().zip(&self.pools).zip(&shapes) {
            let n = oh * ow;
            let pl = c.patch_len();
            let in_len = c.in_ch * h * w;
            let out_len = c.out_ch * n;
            let pooled_len = c.out_ch * ph * pw;
            let mut cols = vec![0.0; if keep { b * pl * n } else { pl * n }];
            let mut act = vec![0.0; b * out_len];
            let mut pooled = vec![0.0; b * pooled_len];
            let mut argmax = vec![0u32; if pool > 1 { b * pooled_len } else { 0 }];
            for s in 0..b {
                let cs = if keep {
                    &mut cols[s * pl * n..(s + 1) * pl * n]
                } else {
                    &mut cols[..]
                };
                c.im2col(&cur[s * in_len..(s + 1) * in_len], h, w, oh, ow, cs);
                let a = &mut act[s * out_len..(s + 1) * out_len];
                c.forward_cols(cs, n, a);
                if pool > 1 {
                    conv::max_pool(
                        a,
                        c.out_ch,
                        oh,
                        ow,
                        pool,
                        &mut pooled[s * pooled_len..(s + 1) * pooled_len],
                        &mut argmax[s * pooled_len..(s + 1) * pooled_len],
                    );
                } else {
                    pooled[s * pooled_len..(s + 1) * pooled_len].copy_from_slice(a);
                }
            }
            cur = pooled;
            if keep {
                caches.push(ConvCache {
                    cols,
                    act,
                    argmax,
                    h,
                    w,
                    n,
                    pooled_len,
                });
            }
        }

        let width = cur.len() / b.max(1);
        let mut h = Mat::from_vec(b, width, cur)?;
        let mut dense_in = Vec::with_capacity(self.dense.len());
        let mut dense_out = Vec::with_capacity(self.dense.len());
        let mut dropout = Vec::with_capacity(self.dense.len());
        for (i, d) in self.dense.iter().enumerate() {
            let mask = match mode {
                Mode::Train { dropout_seed } if d.dropout_rate > 0.0 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                    rng.set_stream(i as u64);
                    let keep_scale = 1.0 / (1.0 - d.dropout_rate);
                    let m: Vec<f64> = (0..h.rows() * h.cols())
                        .map(|_| {
                            if rng.random::<f64>() < d.dropout_rate {
                                0.0
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    for (v, s) in h.as_mut_slice().iter_mut().zip(&m) {
                        *v *= s;
                    }
                    Some(m)
                }
                _ => None,
            };
            let aug = h.with_ones_column();
            let mut z = d.pre_activation(&aug);
            if d.activation == Activation::Relu {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if i + 1 < self.dense.len() {
                h = z.clone();
            }
            dense_in.push(aug);
            dense_out.push(z);
            dropout.push(mask);
        }
        Ok(Trace {
            conv: caches,
            dense_in,
            dropout,
            dense_out,
        })
    }

    /// Logits for a batch; optionally the augmented input of every dense layer.
    pub fn forward(&self, x: &Mat, mode: Mode, capture: bool) -> Result<Forward> {
        let mut t = self.trace(x, mode, false)?;
        let logits = t.dense_out.pop().expect("at least one dense layer");
        Ok(Forward {
            logits,
            captured: capture.then_some(t.dense_in),
        })
    }

    /// Evaluation-mode logits computed from the captured input of dense layer `from`.
    pub fn dense_forward(&self, from: usize, aug_input: &Mat) -> Result<Mat> {
        let first = self
            .dense
            .get(from)
            .ok_or_else(|| Error::InvalidArgument(format!("no dense layer {from}")))?;
        if aug_input.cols() != first.d_in() + 1 {
            return Err(Error::dims("Net::dense_forward", first.d_in() + 1, aug_input.cols()));
        }
        let mut z = first.pre_activation(aug_input);
        for (i, d) in self.dense.iter().enumerate().skip(from) {
            if i > from {
                z = d.pre_activation(&z.with_ones_column());
            }
            if d.activation == Activation::Relu {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(z)
    }

    /// Backward FLOPs for one batch under `plan`: weight gradients of active
    /// layers, plus input gradients wherever a trainable layer lies below.
    pub fn backward_flop_estimate(&self, plan: &FreezePlan, batch: usize) -> Result<u64> {
        let shapes = self.block_shapes()?;
        let b = batch as u64;
        let lowest = plan.active_layers.iter().next().copied();
        let mut flops = 0u64;
        for (i, d) in self.dense.iter().enumerate() {
            let (din, dout) = (d.d_in() as u64, d.d_out() as u64);
            flops += 2 * b * (din + 1) * dout;
            if i > 0 || lowest.is_some() {
                flops += 2 * b * din * dout;
            }
        }
        for (l, (c, &(_, _, oh, ow, ..))) in self.conv.iter().zip(&shapes).enumerate() {
            let macs = b * c.forward_macs(oh, ow);
            if plan.is_active(l) {
                flops += 2 * macs;
            }
            if lowest.is_some_and(|low| l > low) {
                flops += 2 * macs;
            }
        }
        Ok(flops)
    }

    /// Mean softmax cross-entropy and its gradient for the trainable groups under `plan`.
    pub fn loss_and_gradients(&self, x: &Mat, labels: &[usize], plan: &FreezePlan, mode: Mode) -> Result<BatchGrad> {
        if plan.l_c() != self.conv.len() {
            return Err(Error::InvalidArgument(format!(
                "freeze plan covers {} conv layers, network has {}",
                plan.l_c(),
                self.conv.len()
            )));
        }
        if labels.len() != x.rows() || x.rows() == 0 {
            return Err(Error::dims("loss_and_gradients labels", x.rows(), labels.len()));
        }
        let classes = self.num_classes();
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..{classes}")));
        }
        let t = self.trace(x, mode, true)?;
        let b = x.rows();
        let logits = t.dense_out.last().expect("dense layers");
        let (loss, correct, mut g) = softmax_ce(logits, labels);

        let lowest = plan.active_layers.iter().next().copied();
        let mut dense_grads: Vec<Option<Mat>> = vec![None; self.dense.len()];
        let mut d_flat: Option<Mat> = None;
        for i in (0..self.dense.len()).rev() {
            let d = &self.dense[i];
            dense_grads[i] = Some(t.dense_in[i].t_matmul(&g));
            if i == 0 && lowest.is_none() {
                break;
            }
            let (din, dout) = (d.d_in(), d.d_out());
            let mut dx = Mat::zeros(b, din);
            gemm(
                b,
                dout,
                din,
                1.0,
                MatRef::normal(&g),
                MatRef::row_major_t(&d.weights.as_slice()[..din * dout], dout),
                0.0,
                &mut dx,
            );
            if let Some(m) = &t.dropout[i] {
                for (v, s) in dx.as_mut_slice().iter_mut().zip(m) {
                    *v *= s;
                }
            }
            if i == 0 {
                d_flat = Some(dx);
                break;
            }
            if self.dense[i - 1].activation == Activation::Relu {
                for (v, a) in dx.as_mut_slice().iter_mut().zip(t.dense_out[i - 1].as_slice()) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = dx;
        }

        let mut conv_grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; self.conv.len()];
        if let (Some(low), Some(d_flat)) = (lowest, d_flat) {
            let mut d_pooled = d_flat.into_vec();
            for l in (low..self.conv.len()).rev() {
                let c = &self.conv[l];
                let cache = &t.conv[l];
                let n = cache.n;
                let out_len = c.out_ch * n;
                let pl = c.patch_len();
                let mut dy = vec![0.0; b * out_len];
                if self.pools[l] > 1 {
                    for (j, &at) in cache.argmax.iter().enumerate() {
                        let s = j / cache.pooled_len;
                        dy[s * out_len + at as usize] += d_pooled[j];
                    }
                } else {
                    dy.copy_from_slice(&d_pooled);
                }
                for (v, a) in dy.iter_mut().zip(&cache.act) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
                if plan.is_active(l) {
                    let mut dk = vec![0.0; c.kernels.len()];
                    let mut db = vec![0.0; c.out_ch];
                    for s in 0..b {
                        c.accumulate_grads(
                            &cache.cols[s * pl * n..(s + 1) * pl * n],
                            &dy[s * out_len..(s + 1) * out_len],
                            n,
                            &mut dk,
                            &mut db,
                        );
                    }
                    conv_grads[l] = Some((dk, db));
                }
                if l > low {
                    let in_len = c.in_ch * cache.h * cache.w;
                    let (oh, ow) = c.out_hw(cache.h, cache.w)?;
                    let mut dcols = vec![0.0; pl * n];
                    let mut dx = vec![0.0; b * in_len];
                    for s in 0..b {
                        c.input_cols_grad(&dy[s * out_len..(s + 1) * out_len], n, &mut dcols);
                        c.col2im(&dcols, cache.h, cache.w, oh, ow, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                    d_pooled = dx;
                }
            }
        }

        Ok(BatchGrad {
            loss,
            correct,
            grads: Gradients {
                conv: conv_grads,
                dense: dense_grads.into_iter().map(|g| g.expect("every dense layer")).collect(),
            },
            backward_flops: self.backward_flop_estimate(plan, b)?,
        })
    }
}

/// Mean cross-entropy of `softmax(logits)`, the number of correct argmax
/// predictions, and the gradient with respect to the logits.
pub(crate) fn softmax_ce(logits: &Mat, labels: &[usize]) -> (f64, usize, Mat) {
    let b = logits.rows();
    let mut grad = Mat::zeros(b, logits.cols());
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let (arg, m) = argmax(z);
        if arg == y {
            correct += 1;
        }
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - z[y];
        let g = grad.row_mut(i);
        for (gj, zj) in g.iter_mut().zip(z) {
            *gj = (zj - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    (loss / b as f64, correct, grad)
}

/// Index and value of the first maximum.
pub(crate) fn argmax(z: &[f64]) -> (usize, f64) {
    z.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cnn(seed: u64) -> Net {
        let spec = NetSpec {
            input_shape: [2, 6, 5],
            conv: vec![
                ConvSpec {
                    in_ch: 2,
                    out_ch: 3,
                    k: 3,
                    stride: 1,
                    padding: 1,
                    pool: 2,
                },
                ConvSpec {
                    in_ch: 3,
                    out_ch: 4,
                    k: 2,
                    stride: 1,
                    padding: 0,
                    pool: 1,
                },
            ],
            dense: vec![
                DenseSpec {
                    d_in: 8,
                    d_out: 5,
                    activation: Activation::Relu,
                    dropout_rate: 0.0,
                },
                DenseSpec {
                    d_in: 5,
                    d_out: 3,
                    activation: Activation::Linear,
                    dropout_rate: 0.0,
                },
            ],
        };
        let mut net = Net::from_spec(&spec).unwrap();
        net.init(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for g in net.param_groups_mut() {
            for v in g.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        net
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn spec_text_round_trip() {
        let net = tiny_cnn(1);
        let text = net.spec().to_string();
        assert_eq!(text.parse::<NetSpec>().unwrap(), net.spec());
        assert!("input 1 2; dense 2 2 linear 0".parse::<NetSpec>().is_err());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let net = Net::from_spec(&tiny_cnn(1).spec()).unwrap();
        let out = net.forward(&batch(4, 60, 2), Mode::Eval, false).unwrap();
        assert!(out.logits.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let spec = NetSpec {
            input_shape: [1, 3, 3],
            conv: vec![ConvSpec {
                in_ch: 1,
                out_ch: 1,
                k: 1,
                stride: 1,
                padding: 0,
                pool: 1,
            }],
            dense: vec![DenseSpec {
                d_in: 9,
                d_out: 9,
                activation: Activation::Linear,
                dropout_rate: 0.0,
            }],
        };
        let mut net = Net::from_spec(&spec).unwrap();
        net.conv[0].kernels[0] = 1.0;
        for i in 0..9 {
            net.dense[0].weights[(i, i)] = 1.0;
        }
        let x = batch(2, 9, 3);
        let out = net.forward(&x, Mode::Eval, true).unwrap();
        assert_eq!(out.logits, x);
        let cap = out.captured.unwrap();
        assert_eq!(cap[0], x.with_ones_column());
    }

    #[test]
    fn shape_errors() {
        let net = tiny_cnn(1);
        assert!(net.forward(&batch(2, 59, 1), Mode::Eval, false).is_err());
        let mut spec = net.spec();
        spec.dense[0].d_in = 9;
        assert!(Net::from_spec(&spec).is_err());
        assert!(Net::build(Arch::CnnS, [1, 1, 2], 3, 0.0, 1).is_err());
        let mlp = Net::build(Arch::Mlp, [1, 1, 2], 3, 0.0, 1).unwrap();
        assert_eq!(mlp.dense.len(), 3);
        let cnn = Net::build(Arch::CnnS, [1, 28, 28], 10, 0.0, 1).unwrap();
        assert_eq!(cnn.dense[0].d_in(), 288);
    }

    #[test]
    fn dense_forward_matches_full_forward() {
        let net = tiny_cnn(4);
        let x = batch(5, 60, 5);
        let out = net.forward(&x, Mode::Eval, true).unwrap();
        let cap = out.captured.unwrap();
        assert!(net.dense_forward(0, &cap[0]).unwrap().rel_diff(&out.logits) < 1e-14);
        assert!(net.dense_forward(1, &cap[1]).unwrap().rel_diff(&out.logits) < 1e-14);
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let net = tiny_cnn(6);
        let x = batch(4, 60, 7);
        let labels = [0, 1, 2, 1];
        let mut plan = FreezePlan::all_active(2, 0);
        plan.active_layers.remove(&0);
        plan.l_a = 1;
        plan.l_i = 1;
        let g = net.loss_and_gradients(&x, &labels, &plan, Mode::Eval).unwrap();
        assert!(g.grads.conv[0].is_none());
        assert!(g.grads.conv[1].is_some());
        let full = net
            .loss_and_gradients(&x, &labels, &FreezePlan::all_active(2, 0), Mode::Eval)
            .unwrap();
        assert_eq!(full.grads.conv[1], g.grads.conv[1]);
        assert!(g.backward_flops < full.backward_flops);
    }
}
