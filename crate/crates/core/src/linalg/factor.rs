//! Cholesky and pivoted LU factorizations.

use super::Mat;
use crate::error::{Error, Result};

/// Dot product with four independent accumulators and a fixed summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix. Only the lower triangle is read.
    pub fn factor(a: &Mat) -> Result<Cholesky> {
        Cholesky::factor_owned(a.clone())
    }

    /// As [`factor`](Self::factor), reusing `a`'s storage for the factor.
    pub fn factor_owned(mut a: Mat) -> Result<Cholesky> {
        if !a.is_square() {
            return Err(Error::dims("cholesky", "square matrix", format!("{:?}", a.shape())));
        }
        let n = a.rows();
        for i in 0..n {
            for j in 0..=i {
                let s = {
                    let li = &a.row(i)[..j];
                    let lj = &a.row(j)[..j];
                    a[(i, j)] - dot(li, lj)
                };
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular { op: "cholesky" });
                    }
                    a[(i, i)] = s.sqrt();
                } else {
                    a[(i, j)] = s / a[(j, j)];
                }
            }
            a.row_mut(i)[i + 1..].fill(0.0);
        }
        Ok(Cholesky { l: a })
    }

    pub fn factor_matrix(&self) -> &Mat {
        &self.l
    }

    /// `(max Lᵢᵢ / min Lᵢᵢ)²`, a cheap lower bound on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.l.rows();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = self.l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if n == 0 {
            1.0
        } else {
            (hi / lo).powi(2)
        }
    }

    /// Solves `A·X = B` in place (`B` is overwritten with `X`).
    pub fn solve_in_place(&self, b: &mut Mat) {
        let n = self.l.rows();
        assert_eq!(b.rows(), n, "cholesky solve: rhs rows");
        let m = b.cols();
        let data = b.as_mut_slice();
        // L·Y = B
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * m);
            let yi = &mut rest[..m];
            let li = self.l.row(i);
            for (k, &lik) in li[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, &done[k * m..(k + 1) * m], yi);
                }
            }
            let inv = 1.0 / li[i];
            yi.iter_mut().for_each(|v| *v *= inv);
        }
        // Lᵀ·X = Y
        for i in (0..n).rev() {
            let (head, tail) = data.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            for k in (i + 1)..n {
                let lki = self.l[(k, i)];
                if lki != 0.0 {
                    let xk = &tail[(k - i - 1) * m..(k - i) * m];
                    axpy(-lki, xk, xi);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization with partial (row) pivoting: `P·A = L·U`.
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Mat) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::dims("lu", "square matrix", format!("{:?}", a.shape())));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite { op: "lu" });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tol = a.max_abs() * n as f64 * f64::EPSILON;
        for k in 0..n {
            let (mut p, mut best) = (k, lu[(k, k)].abs());
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tol || best == 0.0 {
                return Err(Error::Singular { op: "lu" });
            }
            if p != k {
                perm.swap(p, k);
                let data = lu.as_mut_slice();
                let (lo, hi) = data.split_at_mut(p * n);
                lo[k * n..(k + 1) * n].swap_with_slice(&mut hi[..n]);
            }
            let data = lu.as_mut_slice();
            let (top, bottom) = data.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n..(k + 1) * n];
            let pivot = pivot_row[k];
            for i in 0..(n - k - 1) {
                let row = &mut bottom[i * n..(i + 1) * n];
                let f = row[k] / pivot;
                row[k] = f;
                if f != 0.0 {
                    axpy(-f, &pivot_row[k + 1..], &mut row[k + 1..]);
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    /// Solves `A·X = B`.
    pub fn solve(&self, b: &Mat) -> Mat {
        let n = self.lu.rows();
        assert_eq!(b.rows(), n, "lu solve: rhs rows");
        let m = b.cols();
        let mut x = b.select_rows(&self.perm);
        let data = x.as_mut_slice();
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * m);
            let xi = &mut rest[..m];
            let li = self.lu.row(i);
            for (k, &lik) in li[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, &done[k * m..(k + 1) * m], xi);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = data.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            let ui = self.lu.row(i);
            for k in (i + 1)..n {
                let uik = ui[k];
                if uik != 0.0 {
                    axpy(-uik, &tail[(k - i - 1) * m..(k - i) * m], xi);
                }
            }
            let inv = 1.0 / ui[i];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        x
    }
}

/// Inverse of a square matrix through a pivoted LU factorization.
pub fn direct_inverse(m: &Mat) -> Result<Mat> {
    let lu = Lu::factor(m)?;
    let inv = lu.solve(&Mat::identity(m.rows()));
    if !inv.is_finite() {
        return Err(Error::Singular { op: "direct_inverse" });
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn inverse_of_identity() {
        assert_eq!(direct_inverse(&Mat::identity(4)).unwrap(), Mat::identity(4));
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = direct_inverse(&Mat::diag(&[2.0, 4.0])).unwrap();
        assert_eq!(inv, Mat::diag(&[0.5, 0.25]));
    }

    #[test]
    fn inverse_residual_of_random_matrix() {
        let mut m = random(5, 5, 11);
        m.add_to_diag(3.0);
        let inv = direct_inverse(&m).unwrap();
        let resid = m.matmul(&inv).sub(&Mat::identity(5)).frobenius_norm();
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let m = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(direct_inverse(&m).unwrap(), m);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(direct_inverse(&m), Err(Error::Singular { .. })));
        assert!(direct_inverse(&Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = random(6, 4, 3);
        let mut g = a.t_matmul(&a);
        g.add_to_diag(0.5);
        let b = random(4, 3, 4);
        let x = Cholesky::factor(&g).unwrap().solve(&b);
        assert!(g.matmul(&x).rel_diff(&b) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::diag(&[1.0, -1.0]);
        assert!(Cholesky::factor(&m).is_err());
    }
}
