//! Batch-by-batch ridge regression.
//!
//! The state keeps `R_p⁻¹ = (I/C + Σ Hᵢᵀ Hᵢ)⁻¹` and the running solution
//! `η_p = R_p⁻¹ Σ Hᵢᵀ eᵢ`. A new batch `(H_p, e_p)` with `b` rows is folded in
//! with the Sherman-Morrison-Woodbury identity, which needs a `b × b` solve
//! instead of re-inverting the `d × d` Gram matrix:
//!
//! ```text
//! S_p    = I_b + H_p R_{p-1}⁻¹ H_pᵀ
//! K_p    = I_d − R_{p-1}⁻¹ H_pᵀ S_p⁻¹ H_p
//! R_p⁻¹  = K_p R_{p-1}⁻¹
//! η_p    = K_p η_{p-1} + R_p⁻¹ H_pᵀ e_p
//! ```

use std::io::{Read, Write};

use super::factor::{direct_inverse, Cholesky};
use super::ridge::{check_pair, check_reg_c, regularized_gram};
use super::Mat;
use crate::error::{Error, Result};

/// Condition estimate of `S_p` above which an update is refused.
pub const MAX_INNER_CONDITION: f64 = 1e12;

/// Relative Frobenius tolerance at which batch-by-batch and one-shot solutions agree.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// Incremental solver state. Only constructible from a first batch.
#[derive(Clone, Debug)]
pub struct RlsState {
    r_inv: Mat,
    eta: Mat,
    batches_seen: usize,
    reg_c: f64,
}

impl RlsState {
    /// Starts the recursion from the first batch with a direct inverse of `H₁ᵀH₁ + I/C`.
    pub fn init(h1: &Mat, e1: &Mat, reg_c: f64) -> Result<RlsState> {
        check_reg_c(reg_c)?;
        check_pair("rls_init", h1, e1)?;
        let gram = regularized_gram(h1, reg_c);
        let mut r_inv = direct_inverse(&gram)?;
        r_inv.symmetrize();
        let eta = r_inv.matmul(&h1.t_matmul(e1));
        Ok(RlsState {
            r_inv,
            eta,
            batches_seen: 1,
            reg_c,
        })
    }

    /// Folds one more batch into the state.
    ///
    /// `K_p` is never formed: with `U = H_p R⁻¹` (so `R⁻¹H_pᵀ = Uᵀ`), one Cholesky
    /// factorization of `S_p` solves for `[U | H_p η]` at once and
    /// `K_p X = X − Uᵀ S_p⁻¹ H_p X` is applied to `R⁻¹` and `η`.
    pub fn update(&mut self, hp: &Mat, ep: &Mat) -> Result<()> {
        check_pair("rls_update", hp, ep)?;
        if hp.cols() != self.d() {
            return Err(Error::dims(
                "rls_update",
                format!("{} feature columns", self.d()),
                hp.cols(),
            ));
        }
        if ep.cols() != self.c() {
            return Err(Error::dims(
                "rls_update",
                format!("{} target columns", self.c()),
                ep.cols(),
            ));
        }
        let d = self.d();

        let u = hp.matmul(&self.r_inv);
        let mut s = u.matmul_t(hp);
        s.add_to_diag(1.0);
        s.symmetrize();
        let chol = Cholesky::factor_owned(s).map_err(|_| Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
        let condition = chol.condition_estimate();
        if !(condition <= MAX_INNER_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }

        let hp_eta = hp.matmul(&self.eta);
        let mut rhs = u.hstack(&hp_eta);
        drop(hp_eta);
        chol.solve_in_place(&mut rhs);
        drop(chol);
        let (s_inv_u, s_inv_hp_eta) = rhs.split_cols(d);
        drop(rhs);

        let mut r_inv = self.r_inv.sub(&u.t_matmul(&s_inv_u));
        r_inv.symmetrize();
        drop(s_inv_u);

        let mut eta = self.eta.sub(&u.t_matmul(&s_inv_hp_eta));
        drop(u);
        eta.add_scaled_in_place(1.0, &r_inv.matmul(&hp.t_matmul(ep)));

        if !r_inv.is_finite() || !eta.is_finite() {
            return Err(Error::NonFinite { op: "rls_update" });
        }
        self.r_inv = r_inv;
        self.eta = eta;
        self.batches_seen += 1;
        Ok(())
    }

    /// Consuming variant of [`update`](Self::update).
    pub fn updated(mut self, hp: &Mat, ep: &Mat) -> Result<RlsState> {
        self.update(hp, ep)?;
        Ok(self)
    }

    pub fn r_inv(&self) -> &Mat {
        &self.r_inv
    }

    pub fn eta(&self) -> &Mat {
        &self.eta
    }

    pub fn into_eta(self) -> Mat {
        self.eta
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    pub fn reg_c(&self) -> f64 {
        self.reg_c
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.r_inv.rows()
    }

    /// Output dimension.
    pub fn c(&self) -> usize {
        self.eta.cols()
    }

    /// Writes the debug dump: `d`, `c`, `batches_seen` as little-endian `u64`,
    /// then `r_inv` and `eta` as row-major little-endian `f64`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in [self.d(), self.c(), self.batches_seen] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.r_inv.as_slice().iter().chain(self.eta.as_slice()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`write_dump`](Self::write_dump). `C` is not part
    /// of the dump and must be supplied.
    pub fn read_dump<R: Read>(mut r: R, reg_c: f64) -> Result<RlsState> {
        check_reg_c(reg_c)?;
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        let field = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&header[i * 8..(i + 1) * 8]);
            u64::from_le_bytes(b) as usize
        };
        let (d, c, batches_seen) = (field(0), field(1), field(2));
        if batches_seen == 0 {
            return Err(Error::InvalidArgument("RLS dump with zero batches".into()));
        }
        let mut read_mat = |rows: usize, cols: usize| -> Result<Mat> {
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Mat::from_vec(rows, cols, data)
        };
        let r_inv = read_mat(d, d)?;
        let eta = read_mat(d, c)?;
        Ok(RlsState {
            r_inv,
            eta,
            batches_seen,
            reg_c,
        })
    }
}

/// Runs the recursion over a sequence of `(H_p, e_p)` batches.
pub fn rls_solve<'a, I>(batches: I, reg_c: f64) -> Result<RlsState>
where
    I: IntoIterator<Item = (&'a Mat, &'a Mat)>,
{
    let mut it = batches.into_iter();
    let (h1, e1) = it.next().ok_or(Error::EmptyStream)?;
    let mut state = RlsState::init(h1, e1, reg_c)?;
    for (h, e) in it {
        state.update(h, e)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ridge_solve;

    #[test]
    fn init_on_identity() {
        let s = RlsState::init(&Mat::identity(2), &Mat::identity(2), 1.0).unwrap();
        let half = Mat::identity(2).scale(0.5);
        assert!(s.r_inv().rel_diff(&half) < 1e-15);
        assert!(s.eta().rel_diff(&half) < 1e-15);
        assert_eq!(s.batches_seen(), 1);
    }

    #[test]
    fn single_row_batch_initializes() {
        let h = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let e = Mat::from_rows(&[vec![0.5]]).unwrap();
        let s = RlsState::init(&h, &e, 4.0).unwrap();
        assert!(s.eta().rel_diff(&ridge_solve(&h, &e, 4.0).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_batch_leaves_state_unchanged() {
        let h = Mat::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let e = Mat::from_fn(4, 2, |i, j| ((i + 2 * j) as f64).cos());
        let mut s = RlsState::init(&h, &e, 10.0).unwrap();
        let (r0, eta0) = (s.r_inv().clone(), s.eta().clone());
        s.update(&Mat::zeros(5, 3), &Mat::from_fn(5, 2, |i, _| i as f64))
            .unwrap();
        assert_eq!(s.batches_seen(), 2);
        assert_eq!(s.r_inv(), &r0);
        assert_eq!(s.eta(), &eta0);
    }

    #[test]
    fn update_rejects_mismatched_shapes() {
        let mut s = RlsState::init(&Mat::identity(3), &Mat::zeros(3, 2), 1.0).unwrap();
        assert!(matches!(
            s.update(&Mat::zeros(2, 4), &Mat::zeros(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.update(&Mat::zeros(2, 3), &Mat::zeros(2, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.update(&Mat::zeros(2, 3), &Mat::zeros(3, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn huge_batch_scale_is_reported_as_ill_conditioned() {
        let mut s = RlsState::init(&Mat::identity(2), &Mat::zeros(2, 1), 1e14).unwrap();
        let hp = Mat::from_rows(&[vec![1e7, 0.0], vec![0.0, 1.0]]).unwrap();
        let err = s.update(&hp, &Mat::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }), "{err}");
    }

    #[test]
    fn dump_round_trip() {
        let h = Mat::from_fn(6, 3, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let e = Mat::from_fn(6, 2, |i, j| ((i + j) as f64 * 0.11).cos());
        let s = RlsState::init(&h, &e, 2.0).unwrap();
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + (9 + 6) * 8);
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        let back = RlsState::read_dump(&buf[..], 2.0).unwrap();
        assert_eq!(back.r_inv(), s.r_inv());
        assert_eq!(back.eta(), s.eta());
        assert_eq!(back.batches_seen(), 1);
    }
}
