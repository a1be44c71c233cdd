use super::factor::Cholesky;
use super::Mat;
use crate::error::{Error, Result};

pub(crate) fn check_reg_c(reg_c: f64) -> Result<()> {
    if reg_c > 0.0 && reg_c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRegularization(reg_c))
    }
}

pub(crate) fn check_pair(op: &'static str, h: &Mat, e: &Mat) -> Result<()> {
    if h.rows() == 0 {
        return Err(Error::dims(op, "at least one row", 0));
    }
    if h.rows() != e.rows() {
        return Err(Error::dims(
            op,
            format!("{} target rows", h.rows()),
            format!("{} target rows", e.rows()),
        ));
    }
    if !h.is_finite() || !e.is_finite() {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

/// Regularized Gram matrix `HᵀH + I/C`.
pub(crate) fn regularized_gram(h: &Mat, reg_c: f64) -> Mat {
    let mut gram = h.t_matmul(h);
    gram.add_to_diag(1.0 / reg_c);
    gram.symmetrize();
    gram
}

/// One-shot ridge solution `η = (HᵀH + I/C)⁻¹ Hᵀ e`.
///
/// `η` minimizes `‖e − Hη‖²_F + ‖η‖²_F / C`; larger `C` means weaker
/// regularization. The `d × d` system is solved by Cholesky factorization.
pub fn ridge_solve(h: &Mat, e: &Mat, reg_c: f64) -> Result<Mat> {
    check_reg_c(reg_c)?;
    check_pair("ridge_solve", h, e)?;
    let gram = regularized_gram(h, reg_c);
    let mut eta = h.t_matmul(e);
    Cholesky::factor_owned(gram)?.solve_in_place(&mut eta);
    Ok(eta)
}

/// Regularized Moore-Penrose inverse `(AᵀA + I/C)⁻¹ Aᵀ` of a `m × n` matrix, shaped `n × m`.
pub fn mp_inverse(a: &Mat, reg_c: f64) -> Result<Mat> {
    check_reg_c(reg_c)?;
    if !a.is_finite() {
        return Err(Error::NonFinite { op: "mp_inverse" });
    }
    let gram = regularized_gram(a, reg_c);
    let mut p = a.transpose();
    Cholesky::factor_owned(gram)?.solve_in_place(&mut p);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_fit_with_weak_regularization() {
        let eta = ridge_solve(&Mat::identity(3), &Mat::identity(3), 1e12).unwrap();
        assert!(eta.rel_diff(&Mat::identity(3)) < 1e-9);
    }

    #[test]
    fn zero_residual_gives_zero_update() {
        let h = Mat::from_fn(5, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let eta = ridge_solve(&h, &Mat::zeros(5, 2), 2.0).unwrap();
        assert!(eta.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn errors_are_structured() {
        let h = Mat::identity(3);
        assert!(matches!(
            ridge_solve(&h, &Mat::zeros(2, 1), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ridge_solve(&h, &Mat::zeros(3, 1), 0.0),
            Err(Error::InvalidRegularization(_))
        ));
        assert!(matches!(
            ridge_solve(&h, &Mat::zeros(3, 1), -1.0),
            Err(Error::InvalidRegularization(_))
        ));
        let mut bad = Mat::identity(3);
        bad[(0, 0)] = f64::INFINITY;
        assert!(matches!(
            ridge_solve(&bad, &Mat::zeros(3, 1), 1.0),
            Err(Error::NonFinite { .. })
        ));
    }
}
