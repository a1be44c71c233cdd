//! Dense-layer retraining.
//!
//! After an SGD epoch the dense stack is refit from the output backwards. The
//! last layer fits the output residual `T − H·a` (one-hot targets minus
//! logits) with a ridge update `a ← a + μ·η`. Each earlier layer receives the
//! residual pulled back through the regularized pseudo-inverse of the (already
//! updated) layer above it, clamped at zero, and is refit the same way. Every
//! solve streams its rows in fixed-size batches through [`RlsState`].
//!
//! Conventions: samples are rows, a layer computes `[x | 1] · W` with `W`
//! shaped `(d_in + 1) × d_out`, so the last weight row is the bias.

use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mp_inverse, Mat, MemProbe, RlsState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
        }
    }
}

/// A fully connected layer with the bias folded in as the last weight row.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Mat,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl DenseLayer {
    pub fn new(weights: Mat, activation: Activation, dropout_rate: f64) -> Result<DenseLayer> {
        if weights.rows() < 1 || weights.cols() < 1 {
            return Err(Error::dims(
                "DenseLayer::new",
                "non-empty weights",
                format!("{:?}", weights.shape()),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite { op: "DenseLayer::new" });
        }
        Ok(DenseLayer {
            weights,
            activation,
            dropout_rate,
        })
    }

    pub fn zeros(d_in: usize, d_out: usize, activation: Activation) -> DenseLayer {
        DenseLayer {
            weights: Mat::zeros(d_in + 1, d_out),
            activation,
            dropout_rate: 0.0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }

    /// `[x | 1] · W` for an input that already carries the ones column.
    pub fn pre_activation(&self, x_aug: &Mat) -> Mat {
        x_aug.matmul(&self.weights)
    }
}

/// `targets − logits`, the residual the output layer is refit against.
pub fn output_residual(logits: &Mat, targets: &Mat) -> Result<Mat> {
    if logits.shape() != targets.shape() {
        return Err(Error::dims(
            "output_residual",
            format!("{:?}", targets.shape()),
            format!("{:?}", logits.shape()),
        ));
    }
    for i in 0..targets.rows() {
        let row = targets.row(i);
        let ones = row.iter().filter(|v| **v == 1.0).count();
        let zeros = row.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::InvalidArgument(format!("target row {i} is not one-hot")));
        }
    }
    Ok(targets.sub(logits))
}

fn pull_back_with(e_next: &Mat, pinv: &Mat) -> Mat {
    let mut full = e_next.matmul(pinv);
    for v in full.as_mut_slice() {
        *v = v.max(0.0);
    }
    full.take_cols(pinv.cols() - 1)
}

/// Maps the residual of a layer's output onto that layer's (post-activation)
/// input: `max(0, e_next · P)` where `P = (aᵀa + I/C)⁻¹aᵀ` is the regularized
/// pseudo-inverse of `a_next`. The bias coordinate is dropped.
pub fn pull_back_residual(e_next: &Mat, a_next: &Mat, reg_c: f64) -> Result<Mat> {
    if e_next.cols() != a_next.cols() {
        return Err(Error::dims("pull_back_residual", a_next.cols(), e_next.cols()));
    }
    if a_next.rows() < 2 {
        return Err(Error::dims(
            "pull_back_residual",
            "weights with a bias row",
            a_next.rows(),
        ));
    }
    if !e_next.is_finite() {
        return Err(Error::NonFinite {
            op: "pull_back_residual",
        });
    }
    let pinv = mp_inverse(a_next, reg_c)?;
    Ok(pull_back_with(e_next, &pinv))
}

/// Per-layer outcome of one retraining pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// `‖e‖_F` over the streamed rows.
    pub residual_before: f64,
    /// `‖e − μ·H·F(η)‖_F` over the streamed rows.
    pub residual_after: f64,
    pub batches: usize,
    /// `‖F(η)‖_F`
    pub eta_norm: f64,
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "retraining rate μ = {mu} outside (0, 1]"
        )))
    }
}

fn retrain_pairs<I>(
    layer: &DenseLayer,
    pairs: I,
    reg_c: f64,
    mu: f64,
    dropout_mask: Option<&[bool]>,
) -> Result<(DenseLayer, LayerStats)>
where
    I: IntoIterator<Item = Result<(Mat, Mat)>>,
{
    check_mu(mu)?;
    let (d, c) = layer.weights.shape();
    if let Some(mask) = dropout_mask {
        if mask.len() != d {
            return Err(Error::dims("retrain_layer dropout mask", d, mask.len()));
        }
    }

    let mut state: Option<RlsState> = None;
    let mut e_sq = 0.0;
    let mut gram = Mat::zeros(d, d);
    let mut cross = Mat::zeros(d, c);
    for (k, pair) in pairs.into_iter().enumerate() {
        let (h, e) = pair?;
        if h.cols() != d || e.cols() != c {
            return Err(Error::MisalignedStream {
                batch: k,
                detail: format!(
                    "expected {d} feature / {c} residual columns, got {} / {}",
                    h.cols(),
                    e.cols()
                ),
            });
        }
        if h.rows() != e.rows() || h.rows() == 0 {
            return Err(Error::MisalignedStream {
                batch: k,
                detail: format!("{} feature rows vs {} residual rows", h.rows(), e.rows()),
            });
        }
        e_sq += e.frobenius_norm_sq();
        gram.add_scaled_in_place(1.0, &h.t_matmul(&h));
        cross.add_scaled_in_place(1.0, &h.t_matmul(&e));
        state = Some(match state {
            None => RlsState::init(&h, &e, reg_c)?,
            Some(s) => s.updated(&h, &e)?,
        });
    }
    let state = state.ok_or(Error::EmptyStream)?;
    let batches = state.batches_seen();

    let mut eta = state.into_eta();
    if let Some(mask) = dropout_mask {
        for (r, drop) in mask.iter().enumerate() {
            if *drop {
                eta.row_mut(r).fill(0.0);
            }
        }
    }
    let mut weights = layer.weights.clone();
    weights.add_scaled_in_place(mu, &eta);
    if !weights.is_finite() {
        return Err(Error::NonFinite { op: "retrain_layer" });
    }

    let step = eta.scale(mu);
    let after_sq = e_sq - 2.0 * step.dot(&cross) + step.dot(&gram.matmul(&step));
    let stats = LayerStats {
        residual_before: e_sq.sqrt(),
        residual_after: after_sq.max(0.0).sqrt(),
        batches,
        eta_norm: eta.frobenius_norm(),
    };
    let updated = DenseLayer {
        weights,
        activation: layer.activation,
        dropout_rate: layer.dropout_rate,
    };
    Ok((updated, stats))
}

/// Refits one dense layer from aligned feature and residual batch streams.
///
/// The first batch initializes the recursive solver, the remaining ones are
/// folded in one at a time. The new weights are `W + μ·F(η)`, where `F` zeroes
/// the rows of `η` flagged in `dropout_mask` (no masking when `None`).
pub fn retrain_layer<F, E>(
    layer: &DenseLayer,
    features: F,
    residuals: E,
    reg_c: f64,
    mu: f64,
    dropout_mask: Option<&[bool]>,
) -> Result<(DenseLayer, LayerStats)>
where
    F: IntoIterator<Item = Result<Mat>>,
    E: IntoIterator<Item = Result<Mat>>,
{
    let mut fs = features.into_iter();
    let mut es = residuals.into_iter();
    let mut k = 0;
    let pairs = std::iter::from_fn(move || {
        let item = match (fs.next(), es.next()) {
            (None, None) => return None,
            (Some(h), Some(e)) => h.and_then(|h| e.map(|e| (h, e))),
            (Some(_), None) | (None, Some(_)) => Err(Error::MisalignedStream {
                batch: k,
                detail: "feature and residual streams have different lengths".into(),
            }),
        };
        k += 1;
        Some(item)
    });
    retrain_pairs(layer, pairs, reg_c, mu, dropout_mask)
}

/// Replayable access to the input features of every dense layer.
///
/// Features include the trailing constant-one bias column. Asking for the same
/// rows twice must return the same values.
pub trait FeatureSource {
    fn num_rows(&self) -> usize;
    fn num_layers(&self) -> usize;
    fn layer_features(&self, layer: usize, rows: Range<usize>) -> Result<Mat>;
}

/// Features held fully in memory, one matrix per dense layer.
pub struct CapturedFeatures {
    layers: Vec<Mat>,
}

impl CapturedFeatures {
    pub fn new(layers: Vec<Mat>) -> Result<CapturedFeatures> {
        let rows = layers.first().map_or(0, Mat::rows);
        if let Some(m) = layers.iter().find(|m| m.rows() != rows) {
            return Err(Error::dims("CapturedFeatures", rows, m.rows()));
        }
        Ok(CapturedFeatures { layers })
    }

    pub fn layer(&self, i: usize) -> &Mat {
        &self.layers[i]
    }
}

impl FeatureSource for CapturedFeatures {
    fn num_rows(&self) -> usize {
        self.layers.first().map_or(0, Mat::rows)
    }

    fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn layer_features(&self, layer: usize, rows: Range<usize>) -> Result<Mat> {
        let m = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no dense layer {layer}")))?;
        Ok(m.slice_rows(rows))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainConfig {
    /// `C` per dense layer; a single value applies to every layer.
    pub reg_c: Vec<f64>,
    pub mu: f64,
    pub mp_batch_size: usize,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            reg_c: vec![1.0],
            mu: 1.0,
            mp_batch_size: 1024,
            seed: 0,
        }
    }
}

impl RetrainConfig {
    pub fn reg_c_for(&self, layer: usize, n_layers: usize) -> Result<f64> {
        match self.reg_c.len() {
            1 => Ok(self.reg_c[0]),
            n if n == n_layers => Ok(self.reg_c[layer]),
            n => Err(Error::config(
                "retrain.reg_c",
                format!("{n} values given for {n_layers} dense layers"),
            )),
        }
    }
}

/// Result of one pass over the dense stack. Layers are listed first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub layers: Vec<LayerStats>,
    pub duration_ms: f64,
    pub peak_bytes: usize,
}

/// Row mask over `η` (bias row never dropped) drawn once per pass.
pub fn dropout_mask(rate: f64, rows: usize, seed: u64, layer: usize) -> Option<Vec<bool>> {
    if rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64);
    let mut mask: Vec<bool> = (0..rows).map(|_| rng.random::<f64>() < rate).collect();
    if let Some(bias) = mask.last_mut() {
        *bias = false;
    }
    Some(mask)
}

fn chunk_ranges(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(size))
        .map(|k| k * size..((k + 1) * size).min(n))
        .collect()
}

/// Refits the whole dense stack from the last layer to the first.
///
/// Features are reused as captured for the whole pass. The output residual is
/// taken against the pre-pass output weights; each earlier layer's residual is
/// pulled back through the already-updated layers above it.
pub fn retrain_dense_stack(
    layers: &[DenseLayer],
    source: &dyn FeatureSource,
    targets: &Mat,
    cfg: &RetrainConfig,
) -> Result<(Vec<DenseLayer>, RetrainReport)> {
    let n = layers.len();
    let last = layers
        .last()
        .ok_or_else(|| Error::InvalidArgument("no dense layers".into()))?;
    if last.activation != Activation::Linear {
        return Err(Error::InvalidArgument("output layer must be linear".into()));
    }
    if source.num_layers() != n {
        return Err(Error::dims(
            "retrain_dense_stack",
            format!("{n} feature streams"),
            source.num_layers(),
        ));
    }
    if targets.rows() != source.num_rows() || targets.cols() != last.d_out() {
        return Err(Error::dims(
            "retrain_dense_stack targets",
            format!("{} × {}", source.num_rows(), last.d_out()),
            format!("{:?}", targets.shape()),
        ));
    }
    if cfg.mp_batch_size == 0 {
        return Err(Error::config("retrain.mp_batch_size", "must be at least 1"));
    }
    check_mu(cfg.mu)?;

    let started = Instant::now();
    let probe = MemProbe::start();
    let chunks = chunk_ranges(source.num_rows(), cfg.mp_batch_size);
    let mut updated: Vec<DenseLayer> = layers.to_vec();
    let mut stats: Vec<Option<LayerStats>> = vec![None; n];
    let mut output_residuals: Vec<Mat> = Vec::with_capacity(chunks.len());
    // Pseudo-inverses of updated layers, ordered from the output layer down.
    let mut pinvs: Vec<Mat> = Vec::new();

    for i in (0..n).rev() {
        let reg_c = cfg.reg_c_for(i, n)?;
        let mask = dropout_mask(layers[i].dropout_rate, layers[i].d_in() + 1, cfg.seed, i);
        let (layer, layer_stats) = if i == n - 1 {
            let out = &mut output_residuals;
            let a_n = &layers[i];
            let pairs = chunks.iter().map(|r| {
                let h = source.layer_features(i, r.clone())?;
                let e = output_residual(&a_n.pre_activation(&h), &targets.slice_rows(r.clone()))?;
                out.push(e.clone());
                Ok((h, e))
            });
            retrain_pairs(&layers[i], pairs, reg_c, cfg.mu, mask.as_deref())?
        } else {
            let out = &output_residuals;
            let pinvs = &pinvs;
            let pairs = chunks.iter().zip(out).map(|(r, e_n)| {
                let h = source.layer_features(i, r.clone())?;
                let mut e = pull_back_with(e_n, &pinvs[0]);
                for p in &pinvs[1..] {
                    e = pull_back_with(&e, p);
                }
                Ok((h, e))
            });
            retrain_pairs(&layers[i], pairs, reg_c, cfg.mu, mask.as_deref())?
        };
        if i > 0 {
            pinvs.push(mp_inverse(&layer.weights, reg_c)?);
        }
        updated[i] = layer;
        stats[i] = Some(layer_stats);
    }

    let report = RetrainReport {
        layers: stats.into_iter().map(|s| s.expect("every layer retrained")).collect(),
        duration_ms: started.elapsed().as_secs_f64() * 1e3,
        peak_bytes: probe.peak_bytes(),
    };
    Ok((updated, report))
}
