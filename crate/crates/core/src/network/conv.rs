//! Convolution and max pooling on `channels × height × width` samples.
//!
//! Convolutions run as `K · cols` where `cols` is the im2col expansion of one
//! sample (`in_ch·k·k` rows, one column per output pixel).

use crate::error::{Error, Result};
use crate::linalg::{gemm_slice, MatRef};

/// A `k × k` convolution followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `out_ch × in_ch × k × k`, row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize) -> ConvLayer {
        ConvLayer {
            kernels: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
            in_ch,
            out_ch,
            k,
            stride,
            padding,
        }
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.k, self.k]
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |n: usize| {
            let padded = n + 2 * self.padding;
            (self.stride > 0 && padded >= self.k).then(|| (padded - self.k) / self.stride + 1)
        };
        match (span(h), span(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::InvalidArgument(format!(
                "{}×{} kernel (stride {}, padding {}) does not fit a {h}×{w} input",
                self.k, self.k, self.stride, self.padding
            ))),
        }
    }

    /// Multiply-accumulates of one forward pass for one sample.
    pub fn forward_macs(&self, oh: usize, ow: usize) -> u64 {
        (self.out_ch * self.patch_len() * oh * ow) as u64
    }

    pub(crate) fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.padding as isize);
        let n = oh * ow;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p;
                        let out = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            *v = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.k, self.stride, self.padding as isize);
        let n = oh * ow;
        dx.fill(0.0);
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = relu(K · cols + b)` for one sample; `out` is `out_ch × (oh·ow)`.
    pub(crate) fn forward_cols(&self, cols: &[f64], n: usize, out: &mut [f64]) {
        let pl = self.patch_len();
        gemm_slice(
            self.out_ch,
            pl,
            n,
            1.0,
            MatRef::row_major(&self.kernels, pl),
            MatRef::row_major(cols, n),
            0.0,
            out,
        );
        for (o, row) in out.chunks_mut(n).enumerate() {
            let b = self.bias[o];
            for v in row {
                *v = (*v + b).max(0.0);
            }
        }
    }

    /// Accumulates kernel and bias gradients for one sample given the
    /// pre-activation gradient `dy` (`out_ch × n`).
    pub(crate) fn accumulate_grads(&self, cols: &[f64], dy: &[f64], n: usize, dk: &mut [f64], db: &mut [f64]) {
        let pl = self.patch_len();
        gemm_slice(
            self.out_ch,
            n,
            pl,
            1.0,
            MatRef::row_major(dy, n),
            MatRef::row_major_t(cols, n),
            1.0,
            dk,
        );
        for (o, row) in dy.chunks(n).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }

    /// `dcols = Kᵀ · dy` for one sample.
    pub(crate) fn input_cols_grad(&self, dy: &[f64], n: usize, dcols: &mut [f64]) {
        let pl = self.patch_len();
        gemm_slice(
            pl,
            self.out_ch,
            n,
            1.0,
            MatRef::row_major_t(&self.kernels, pl),
            MatRef::row_major(dy, n),
            0.0,
            dcols,
        );
    }
}

/// Non-overlapping `size × size` max pool over one sample. Records the index of
/// each winner in `argmax` (first maximum wins on ties).
pub(crate) fn max_pool(x: &[f64], ch: usize, h: usize, w: usize, size: usize, out: &mut [f64], argmax: &mut [u32]) {
    let (ph, pw) = (h / size, w / size);
    for c in 0..ch {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for dy in 0..size {
                    let row = c * h * w + (py * size + dy) * w + px * size;
                    for dx in 0..size {
                        if x[row + dx] > best {
                            best = x[row + dx];
                            at = row + dx;
                        }
                    }
                }
                let o = (c * ph + py) * pw + px;
                out[o] = best;
                argmax[o] = at as u32;
            }
        }
    }
}
