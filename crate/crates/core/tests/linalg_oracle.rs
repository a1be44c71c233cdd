//! Solver checks against an independent dense oracle (nalgebra: explicit Gram
//! assembly and LU inverse).

use fastretrain::linalg::{direct_inverse, ridge_solve, rls_init, rls_update, Mat, RlsState};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// (HᵀH + I/C)⁻¹ Hᵀ e formed explicitly.
fn oracle_ridge(h: &Mat, e: &Mat, c: f64) -> Mat {
    let h = to_na(h);
    let gram = h.transpose() * &h + DMatrix::identity(h.ncols(), h.ncols()) / c;
    let inv = gram.try_inverse().expect("oracle gram invertible");
    from_na(&(inv * h.transpose() * to_na(e)))
}

#[test]
fn ridge_matches_explicit_gram_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = uniform(6, 3, &mut rng);
    let e = uniform(6, 2, &mut rng);
    let eta = ridge_solve(&h, &e, 10.0).unwrap();
    let expected = oracle_ridge(&h, &e, 10.0);
    assert!(eta.rel_diff(&expected) < 1e-12, "{}", eta.rel_diff(&expected));
}

#[test]
fn ridge_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = uniform(40, 9, &mut rng);
    let e = uniform(40, 3, &mut rng);
    let a = ridge_solve(&h, &e, 2.0).unwrap();
    let b = ridge_solve(&h, &e, 2.0).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn init_matches_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = uniform(4, 3, &mut rng);
    let e = uniform(4, 1, &mut rng);
    let state = rls_init(&h, &e, 5.0).unwrap();
    let expected = ridge_solve(&h, &e, 5.0).unwrap();
    assert!(state.eta().rel_diff(&expected) < 1e-12);
    assert!(
        state.r_inv().rel_diff(
            &direct_inverse(&{
                let mut g = h.t_matmul(&h);
                g.add_to_diag(0.2);
                g
            })
            .unwrap()
        ) < 1e-12
    );
}

fn run_partition(h: &Mat, e: &Mat, sizes: &[usize], c: f64) -> RlsState {
    let mut start = 0;
    let mut state: Option<RlsState> = None;
    for &s in sizes {
        let hp = h.slice_rows(start..start + s);
        let ep = e.slice_rows(start..start + s);
        state = Some(match state {
            None => rls_init(&hp, &ep, c).unwrap(),
            Some(st) => rls_update(st, &hp, &ep).unwrap(),
        });
        start += s;
    }
    assert_eq!(start, h.rows());
    state.unwrap()
}

#[test]
fn three_batches_match_one_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = uniform(12, 4, &mut rng);
    let e = uniform(12, 2, &mut rng);
    let state = run_partition(&h, &e, &[4, 4, 4], 10.0);
    assert_eq!(state.batches_seen(), 3);
    let one_shot = ridge_solve(&h, &e, 10.0).unwrap();
    assert!(state.eta().rel_diff(&one_shot) < 1e-8);
    assert!(state.eta().rel_diff(&oracle_ridge(&h, &e, 10.0)) < 1e-8);
}

#[test]
fn one_batch_and_single_rows_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = uniform(12, 4, &mut rng);
    let e = uniform(12, 2, &mut rng);
    let whole = run_partition(&h, &e, &[12], 10.0);
    let rows = run_partition(&h, &e, &[1; 12], 10.0);
    let oracle = oracle_ridge(&h, &e, 10.0);
    assert!(whole.eta().rel_diff(&oracle) < 1e-8);
    assert!(rows.eta().rel_diff(&oracle) < 1e-8);
    assert!(rows.eta().rel_diff(whole.eta()) < 1e-8);
}

#[test]
fn seeded_random_inverse_has_small_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut m = uniform(5, 5, &mut rng);
    m.add_to_diag(2.0);
    let cond = to_na(&m).singular_values();
    assert!(cond.max() / cond.min() < 1e6);
    let inv = direct_inverse(&m).unwrap();
    let resid = m.matmul(&inv).sub(&Mat::identity(5)).frobenius_norm();
    assert!(resid < 1e-8);
}

fn partition_strategy() -> impl Strategy<Value = (u64, usize, usize, usize, Vec<usize>, f64)> {
    (1usize..=120, 1usize..=16, 1usize..=4, any::<u64>(), 0usize..4).prop_flat_map(|(n, d, c, seed, ci)| {
        let cuts = proptest::collection::vec(1usize..=n, 0..6);
        (
            Just(seed),
            Just(n),
            Just(d),
            Just(c),
            cuts,
            Just([1.0, 2.0, 4.0, 10.0][ci]),
        )
    })
}

fn sizes_from_cuts(n: usize, mut cuts: Vec<usize>) -> Vec<usize> {
    cuts.push(n);
    cuts.sort_unstable();
    cuts.dedup();
    let mut prev = 0;
    let mut sizes = Vec::new();
    for c in cuts {
        if c > prev {
            sizes.push(c - prev);
            prev = c;
        }
    }
    sizes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_partition_matches_one_shot((seed, n, d, c, cuts, reg) in partition_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = uniform(n, d, &mut rng);
        let e = uniform(n, c, &mut rng);
        let sizes = sizes_from_cuts(n, cuts);
        let state = run_partition(&h, &e, &sizes, reg);
        let oracle = oracle_ridge(&h, &e, reg);
        prop_assert!(state.eta().rel_diff(&oracle) <= 1e-8);
        // r_inv stays symmetric
        let asym = state.r_inv().sub(&state.r_inv().transpose()).frobenius_norm()
            / state.r_inv().frobenius_norm();
        prop_assert!(asym <= 1e-10);
    }

    #[test]
    fn smw_inverse_tracks_gram_sum((seed, n, d, c, cuts, reg) in partition_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = uniform(n, d, &mut rng);
        let e = uniform(n, c, &mut rng);
        let sizes = sizes_from_cuts(n, cuts);
        let mut gram = Mat::identity(d).scale(1.0 / reg);
        let mut start = 0;
        let mut state: Option<RlsState> = None;
        for s in sizes {
            let hp = h.slice_rows(start..start + s);
            let ep = e.slice_rows(start..start + s);
            gram = gram.add(&hp.t_matmul(&hp));
            state = Some(match state {
                None => rls_init(&hp, &ep, reg).unwrap(),
                Some(st) => rls_update(st, &hp, &ep).unwrap(),
            });
            let prod = state.as_ref().unwrap().r_inv().matmul(&gram);
            let dev = prod.sub(&Mat::identity(d)).frobenius_norm() / (d as f64).sqrt();
            prop_assert!(dev <= 1e-7, "deviation {dev}");
            start += s;
        }
    }

    #[test]
    fn solver_is_bit_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = uniform(30, 5, &mut rng);
        let e = uniform(30, 2, &mut rng);
        let a = run_partition(&h, &e, &[7, 13, 10], 4.0);
        let b = run_partition(&h, &e, &[7, 13, 10], 4.0);
        prop_assert_eq!(a.eta().as_slice(), b.eta().as_slice());
        prop_assert_eq!(a.r_inv().as_slice(), b.r_inv().as_slice());
    }
}
