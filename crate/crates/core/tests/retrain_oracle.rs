//! Dense retraining against a straight-line nalgebra oracle: explicit Gram
//! inverses, no batching, no shared code with the library solver.

use fastretrain::linalg::Mat;
use fastretrain::retrain::{
    output_residual, pull_back_residual, retrain_dense_stack, retrain_layer, Activation, CapturedFeatures, DenseLayer,
    RetrainConfig,
};
use nalgebra::DMatrix;
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

fn aug(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

fn oracle_ridge(h: &DMatrix<f64>, e: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let gram = h.transpose() * h + DMatrix::identity(h.ncols(), h.ncols()) / c;
    gram.try_inverse().unwrap() * h.transpose() * e
}

/// `max(0, e · (aᵀa + I/C)⁻¹aᵀ)` without the bias column.
fn oracle_pullback(e: &DMatrix<f64>, a: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let gram = a.transpose() * a + DMatrix::identity(a.ncols(), a.ncols()) / c;
    let pinv = gram.try_inverse().unwrap() * a.transpose();
    let full = (e * pinv).map(|v| v.max(0.0));
    full.columns(0, a.nrows() - 1).into_owned()
}

fn one_hot(labels: &[usize], c: usize) -> Mat {
    Mat::from_fn(labels.len(), c, |i, j| if labels[i] == j { 1.0 } else { 0.0 })
}

fn chunks(m: &Mat, size: usize) -> Vec<fastretrain::Result<Mat>> {
    (0..m.rows())
        .step_by(size)
        .map(|s| Ok(m.slice_rows(s..(s + size).min(m.rows()))))
        .collect()
}

#[test]
fn output_residual_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = uniform(8, 3, &mut rng);
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
    let t = one_hot(&labels, 3);
    let e = output_residual(&logits, &t).unwrap();
    for i in 0..8 {
        for j in 0..3 {
            let expected = if labels[i] == j { 1.0 } else { 0.0 } - logits[(i, j)];
            assert_eq!(e[(i, j)], expected);
        }
    }
}

#[test]
fn pullback_matches_explicit_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = uniform(6, 4, &mut rng);
    let a = uniform(6, 4, &mut rng);
    let got = pull_back_residual(&e, &a, 4.0).unwrap();
    let expected = from_na(&oracle_pullback(&to_na(&e), &to_na(&a), 4.0));
    assert_eq!(got.shape(), (6, 5));
    assert!(got.rel_diff(&expected) < 1e-10, "{}", got.rel_diff(&expected));
    assert!(got.as_slice().iter().all(|v| *v >= 0.0));
}

#[test]
fn streamed_layer_matches_one_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = DenseLayer::new(uniform(5, 3, &mut rng), Activation::Linear, 0.0).unwrap();
    let h = uniform(30, 5, &mut rng);
    let e = uniform(30, 3, &mut rng);
    let (streamed, stats) = retrain_layer(&layer, chunks(&h, 10), chunks(&e, 10), 2.0, 1.0, None).unwrap();
    let expected = from_na(&(to_na(&layer.weights) + oracle_ridge(&to_na(&h), &to_na(&e), 2.0)));
    assert!(streamed.weights.rel_diff(&expected) < 1e-8);
    assert_eq!(stats.batches, 3);
    let direct = e.sub(&h.matmul(&streamed.weights.sub(&layer.weights))).frobenius_norm();
    assert!((stats.residual_after - direct).abs() <= 1e-10 * direct.max(1.0));
}

struct Stack {
    layers: Vec<DenseLayer>,
    x: Mat,
    targets: Mat,
}

fn two_layer_stack(seed: u64) -> Stack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = uniform(9, 5, &mut rng);
    let w1 = uniform(6, 3, &mut rng).scale(0.5);
    let x = Mat::from_fn(40, 8, |_, _| rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
    Stack {
        layers: vec![
            DenseLayer::new(w0, Activation::Relu, 0.0).unwrap(),
            DenseLayer::new(w1, Activation::Linear, 0.0).unwrap(),
        ],
        x,
        targets: one_hot(&labels, 3),
    }
}

fn captured(s: &Stack) -> CapturedFeatures {
    let x1 = s.x.with_ones_column();
    let h1 = s.layers[0].pre_activation(&x1).map(|v| v.max(0.0)).with_ones_column();
    CapturedFeatures::new(vec![x1, h1]).unwrap()
}

#[test]
fn two_layer_stack_matches_straight_line_oracle() {
    let s = two_layer_stack(4);
    let c = 4.0;
    let cfg = RetrainConfig {
        reg_c: vec![c],
        mu: 1.0,
        mp_batch_size: 10,
        seed: 0,
    };
    let (out, report) = retrain_dense_stack(&s.layers, &captured(&s), &s.targets, &cfg).unwrap();

    let x1 = aug(&to_na(&s.x));
    let w0 = to_na(&s.layers[0].weights);
    let w1 = to_na(&s.layers[1].weights);
    let h1 = aug(&(&x1 * &w0).map(|v| v.max(0.0)));
    let e2 = to_na(&s.targets) - &h1 * &w1;
    let w1_new = &w1 + oracle_ridge(&h1, &e2, c);
    let e1 = oracle_pullback(&e2, &w1_new, c);
    let w0_new = &w0 + oracle_ridge(&x1, &e1, c);

    assert!(out[1].weights.rel_diff(&from_na(&w1_new)) < 1e-8);
    assert!(out[0].weights.rel_diff(&from_na(&w0_new)) < 1e-8);
    let before = e2.norm();
    let after = (to_na(&s.targets) - &h1 * &w1_new).norm();
    assert!((report.layers[1].residual_before - before).abs() < 1e-10 * before);
    assert!((report.layers[1].residual_after - after).abs() < 1e-9 * before);
    assert!(after <= before);
    assert_eq!(report.layers[0].batches, 4);
}

#[test]
fn batch_size_does_not_change_the_result() {
    let s = two_layer_stack(5);
    let src = captured(&s);
    let run = |b: usize| {
        let cfg = RetrainConfig {
            reg_c: vec![2.0, 4.0],
            mu: 1.0,
            mp_batch_size: b,
            seed: 0,
        };
        retrain_dense_stack(&s.layers, &src, &s.targets, &cfg).unwrap().0
    };
    let reference = run(40);
    for b in [1, 7, 13, 40, 100] {
        let out = run(b);
        for (a, r) in out.iter().zip(&reference) {
            assert!(a.weights.rel_diff(&r.weights) < 1e-8, "batch {b}");
        }
    }
}

#[test]
fn step_is_linear_in_mu() {
    let s = two_layer_stack(6);
    let src = captured(&s);
    let run = |mu: f64| {
        let cfg = RetrainConfig {
            reg_c: vec![4.0],
            mu,
            mp_batch_size: 16,
            seed: 0,
        };
        retrain_dense_stack(&s.layers, &src, &s.targets, &cfg).unwrap().0
    };
    let full = run(1.0)[1].weights.sub(&s.layers[1].weights);
    for mu in [0.25, 0.5, 0.9] {
        let part = run(mu)[1].weights.sub(&s.layers[1].weights);
        assert!(part.rel_diff(&full.scale(mu)) < 1e-12);
    }
}

#[test]
fn second_pass_never_increases_residual() {
    let s = two_layer_stack(7);
    let src = captured(&s);
    let cfg = RetrainConfig {
        reg_c: vec![4.0],
        mu: 1.0,
        mp_batch_size: 16,
        seed: 0,
    };
    let (once, r1) = retrain_dense_stack(&s.layers, &src, &s.targets, &cfg).unwrap();
    // same captured features, so only the last layer's input is fixed
    let only_last = CapturedFeatures::new(vec![src.layer(1).clone()]).unwrap();
    let (_, r2) = retrain_dense_stack(&once[1..], &only_last, &s.targets, &cfg).unwrap();
    assert!(r2.layers[0].residual_after <= r1.layers[1].residual_after + 1e-12);
}

#[test]
fn report_serializes_with_documented_fields() {
    let s = two_layer_stack(8);
    let (_, report) = retrain_dense_stack(&s.layers, &captured(&s), &s.targets, &RetrainConfig::default()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&report).unwrap();
    for key in ["residual_before", "residual_after", "batches", "eta_norm"] {
        assert!(v["layers"][0][key].is_number(), "{key}");
    }
    assert!(v["duration_ms"].is_number());
    assert!(v["peak_bytes"].as_u64().unwrap() > 0);
}
