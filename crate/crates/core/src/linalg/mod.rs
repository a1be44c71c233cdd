//! Dense linear algebra: the matrix type, factorizations, the one-shot ridge
//! solver and its batch-by-batch counterpart.

mod factor;
mod mat;
pub mod mem;
mod ridge;
mod rls;

pub use factor::{direct_inverse, Cholesky, Lu};
pub use mat::{gemm, gemm_slice, Mat, MatRef};
pub use mem::MemProbe;
pub use ridge::{mp_inverse, ridge_solve};
pub use rls::{rls_solve, RlsState, MAX_INNER_CONDITION, ORACLE_TOLERANCE};

use crate::error::Result;

/// Starts a batch-by-batch solve from its first batch.
pub fn rls_init(h1: &Mat, e1: &Mat, reg_c: f64) -> Result<RlsState> {
    RlsState::init(h1, e1, reg_c)
}

/// Folds batch `(hp, ep)` into `state`.
pub fn rls_update(state: RlsState, hp: &Mat, ep: &Mat) -> Result<RlsState> {
    state.updated(hp, ep)
}
