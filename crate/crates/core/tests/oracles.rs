//! Fast kernels against the direct-loop references in `swag_core::reference`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swag_core::diagnostics::normalized_entropy;
use swag_core::losses::GramMatrix;
use swag_core::tensor::conv_output_dim;
use swag_core::{reference, Tape, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let scale = b.data().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..40 {
        let cin = rng.random_range(1..5);
        let cout = rng.random_range(1..6);
        let k = [1, 3, 5, 7][rng.random_range(0..4)];
        let stride = rng.random_range(1..3);
        let padding = rng.random_range(0..=k / 2);
        let h = rng.random_range(k..k + 9);
        let w = rng.random_range(k..k + 9);
        assert!(conv_output_dim(h, k, stride, padding).is_some());
        let x = random(&[1, cin, h, w], &mut rng);
        let wt = random(&[cout, cin, k, k], &mut rng);
        let b = random(&[cout], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()).unwrap(),
            tape.constant(wt.clone()).unwrap(),
            tape.constant(b.clone()).unwrap(),
        );
        let with_bias = case % 2 == 0;
        let y = tape
            .conv2d(xv, wv, with_bias.then_some(bv), stride, padding)
            .unwrap();
        let oracle = reference::conv2d(&x, &wt, with_bias.then_some(&b), stride, padding);
        assert_eq!(tape.value(y).shape(), oracle.shape());
        let err = rel_diff(tape.value(y), &oracle);
        assert!(err <= 1e-5, "case {case}: k={k} s={stride} p={padding} err {err:e}");
    }
}

#[test]
fn conv2d_f32_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let x = random(&[1, 3, 11, 9], &mut rng).cast::<f32>();
        let w = random(&[4, 3, 3, 3], &mut rng).cast::<f32>();
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()).unwrap(), tape.constant(w.clone()).unwrap());
        let y = tape.conv2d(xv, wv, None, 2, 1).unwrap();
        let oracle = reference::conv2d(&x, &w, None, 2, 1);
        let scale = oracle.data().iter().fold(0f32, |m, v| m.max(v.abs())) as f64;
        assert!(tape.value(y).max_abs_diff(&oracle) / scale <= 1e-5);
    }
}

#[test]
fn max_pool_and_batch_norm_match_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let c = rng.random_range(1..5);
        let x = random(&[1, c, 2 * rng.random_range(1..6), 2 * rng.random_range(1..6)], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let p = tape.max_pool2d(xv, 2, 2).unwrap();
        assert_eq!(tape.value(p), &reference::max_pool2d(&x));

        let gamma = random(&[c], &mut rng);
        let beta = random(&[c], &mut rng);
        let mean = random(&[c], &mut rng);
        let var = Tensor::from_fn(vec![c], |_| rng.random_range(0.1..2.0));
        let y = tape.batch_norm_eval(xv, &gamma, &beta, &mean, &var, 1e-5).unwrap();
        let oracle = reference::batch_norm_eval(&x, &gamma, &beta, &mean, &var, 1e-5);
        assert!(tape.value(y).max_abs_diff(&oracle) <= 1e-12);
    }
}

#[test]
fn gram_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let d = rng.random_range(1..9);
        let f = random(&[1, d, rng.random_range(1..7), rng.random_range(1..7)], &mut rng);
        let g = GramMatrix::compute("t", &f).unwrap();
        let oracle = reference::gram(&f);
        assert!(g.values.max_abs_diff(&oracle) <= 1e-6);

        let f32s = f.cast::<f32>();
        let g32 = GramMatrix::compute("t", &f32s).unwrap();
        assert!(g32.values.max_abs_diff(&reference::gram(&f32s)) <= 1e-6 * (1.0 + oracle.max_value().abs()));
    }
}

#[test]
fn entropy_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..50 {
        let n = rng.random_range(2..300);
        let spread = [0.1, 1.0, 5.0, 20.0][rng.random_range(0..4)];
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let fast = normalized_entropy(&v);
        let direct = reference::normalized_entropy(&v);
        assert!((fast - direct).abs() <= 1e-6, "n={n} {fast} vs {direct}");
    }
}

#[test]
fn identity_dominant_gram_entropy() {
    // diag 50, off-diagonal 0, D = 8: direct formula in closed form.
    let d = 8usize;
    let g: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 50.0 } else { 0.0 }).collect();
    let h = normalized_entropy(&g);
    let z = d as f64 * 50f64.exp() + (d * d - d) as f64;
    let p_on = 50f64.exp() / z;
    let p_off = 1.0 / z;
    let closed = -(d as f64 * p_on * p_on.ln() + (d * d - d) as f64 * p_off * p_off.ln()) / ((d * d) as f64).ln();
    assert!((h - closed).abs() < 1e-9);
    assert!(h < 0.51 && h > 0.49, "ln 8 / ln 64 = 0.5, got {h}");
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for t in [0.5, 1.0, 3.0] {
        let v: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Tensor::new(vec![1, 1, 5, 8], v.clone()).unwrap();
        let s = swag_core::losses::smooth_tensor(&x, t);
        let oracle = reference::softmax(&v, t);
        for (a, b) in s.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((s.sum_f64() - 1.0).abs() < 1e-12);
    }
}
