use std::fmt;
use std::ops::{Index, IndexMut, Range};

use super::mem;
use crate::error::{Error, Result};

/// Dense row-major `f64` matrix. Samples are rows, features are columns.
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn wrap(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        debug_assert_eq!(rows * cols, data.len());
        mem::track_alloc(data.len() * std::mem::size_of::<f64>());
        Mat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat::wrap(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Mat {
        let n = values.len();
        let mut m = Mat::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::dims("Mat::from_vec", rows * cols, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Mat::from_vec" });
        }
        Ok(Mat::wrap(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("Mat::from_rows", cols, bad.len()));
        }
        Mat::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat::wrap(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        std::mem::take(&mut self.data)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            MatRef::normal(self),
            MatRef::normal(other),
            0.0,
            &mut out,
        );
        out
    }

    /// `selfᵀ · other`, without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul: row counts differ");
        let mut out = Mat::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            1.0,
            MatRef::transposed(self),
            MatRef::normal(other),
            0.0,
            &mut out,
        );
        out
    }

    /// `self · otherᵀ`, without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t: column counts differ");
        let mut out = Mat::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            1.0,
            MatRef::normal(self),
            MatRef::transposed(other),
            0.0,
            &mut out,
        );
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "elementwise op: shapes differ");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Mat::wrap(self.rows, self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::wrap(self.rows, self.cols, self.data.iter().map(|v| f(*v)).collect())
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    /// `self += alpha · other`
    pub fn add_scaled_in_place(&mut self, alpha: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "axpy: shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_to_diag(&mut self, v: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += v;
        }
    }

    /// Replaces a square matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize: matrix is not square");
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = m;
                self.data[j * n + i] = m;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius inner product `Σ aᵢⱼ bᵢⱼ`.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot: shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_F / max(‖other‖_F, tiny)`
    pub fn rel_diff(&self, other: &Mat) -> f64 {
        let num = self.sub(other).frobenius_norm();
        let den = other.frobenius_norm();
        if den > f64::MIN_POSITIVE {
            num / den
        } else {
            num
        }
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Mat {
        assert!(range.end <= self.rows, "slice_rows: range out of bounds");
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Mat::wrap(range.len(), self.cols, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat::wrap(idx.len(), self.cols, data)
    }

    /// Drops trailing columns, keeping the first `cols`.
    pub fn take_cols(&self, cols: usize) -> Mat {
        assert!(cols <= self.cols);
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[..cols]);
        }
        Mat::wrap(self.rows, cols, data)
    }

    /// Appends a constant-one column (the bias feature).
    pub fn with_ones_column(&self) -> Mat {
        let mut data = Vec::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.push(1.0);
        }
        Mat::wrap(self.rows, self.cols + 1, data)
    }

    pub fn vstack(parts: &[Mat]) -> Result<Mat> {
        let cols = parts.first().map_or(0, Mat::cols);
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dims("Mat::vstack", cols, p.cols));
            }
            rows += p.rows;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Mat::wrap(rows, cols, data))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "hstack: row counts differ");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Mat::wrap(self.rows, cols, data)
    }

    /// Splits columns into `[..at]` and `[at..]`.
    pub fn split_cols(&self, at: usize) -> (Mat, Mat) {
        assert!(at <= self.cols);
        let mut left = Vec::with_capacity(self.rows * at);
        let mut right = Vec::with_capacity(self.rows * (self.cols - at));
        for i in 0..self.rows {
            let r = self.row(i);
            left.extend_from_slice(&r[..at]);
            right.extend_from_slice(&r[at..]);
        }
        (
            Mat::wrap(self.rows, at, left),
            Mat::wrap(self.rows, self.cols - at, right),
        )
    }
}

impl Clone for Mat {
    fn clone(&self) -> Self {
        Mat::wrap(self.rows, self.cols, self.data.clone())
    }
}

impl Drop for Mat {
    fn drop(&mut self) {
        mem::track_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl PartialEq for Mat {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.6}")).collect();
            let ellipsis = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), ellipsis)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Strided read-only view used to feed the GEMM kernel.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn normal(m: &'a Mat) -> Self {
        MatRef {
            data: &m.data,
            row_stride: m.cols as isize,
            col_stride: 1,
        }
    }

    pub fn transposed(m: &'a Mat) -> Self {
        MatRef {
            data: &m.data,
            row_stride: 1,
            col_stride: m.cols as isize,
        }
    }

    /// A row-major `rows × cols` slice.
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major slice with `cols` columns.
    pub fn row_major_t(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * self.row_stride as usize + (cols - 1) * self.col_stride as usize
    }
}

/// `out = alpha · A · B + beta · out` where `A` is `m × k` and `B` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut Mat) {
    assert_eq!(out.shape(), (m, n), "gemm: output shape");
    gemm_slice(m, k, n, alpha, a, b, beta, &mut out.data);
}

/// Same as [`gemm`] writing into a row-major `m × n` slice.
#[allow(clippy::too_many_arguments)]
pub fn gemm_slice(m: usize, k: usize, n: usize, alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    assert!(out.len() >= m * n, "gemm: output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len(), "gemm: A out of bounds");
    assert!(b.max_offset(k, n) < b.data.len(), "gemm: B out of bounds");
    // SAFETY: the bounds of every strided access were checked above and the
    // output slice holds at least m*n row-major elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
