//! Invariants over randomized inputs.

use proptest::prelude::*;
use swag_core::diagnostics::{gram_stat, map_coordinate, normalized_entropy};
use swag_core::losses::{smooth_tensor, GramMatrix};
use swag_core::Tensor;

fn feature_map() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(d, h, w)| {
        prop::collection::vec(-4.0f64..4.0, d * h * w)
            .prop_map(move |v| Tensor::new(vec![1, d, h, w], v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_is_symmetric_psd(f in feature_map()) {
        let g = GramMatrix::compute("t", &f).unwrap();
        let d = g.d;
        let v = g.values.data();
        for i in 0..d {
            prop_assert!(v[i * d + i] >= 0.0);
            for j in 0..d {
                prop_assert!((v[i * d + j] - v[j * d + i]).abs() < 1e-12);
                // 2x2 principal minors are non-negative for a PSD matrix.
                let minor = v[i * d + i] * v[j * d + j] - v[i * d + j] * v[j * d + i];
                prop_assert!(minor >= -1e-9 * (1.0 + v[i * d + i] * v[j * d + j]));
            }
        }
        // zᵀGz = ‖Fᵀz‖² >= 0 for the all-ones and alternating vectors.
        for z in [vec![1.0; d], (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()] {
            let q: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| z[i] * v[i * d + j] * z[j]).sum();
            prop_assert!(q >= -1e-9);
        }
    }

    #[test]
    fn smoothing_is_a_distribution_and_shift_invariant(f in feature_map(), shift in -50.0f64..50.0, t in 0.25f64..4.0) {
        let s = smooth_tensor(&f, t);
        prop_assert!((s.sum_f64() - 1.0).abs() < 1e-12);
        prop_assert!(s.data().iter().all(|&p| p > 0.0 && p <= 1.0));
        let shifted = smooth_tensor(&f.map(|v| v + shift), t);
        prop_assert!(s.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn gram_stats_ignore_spatial_arrangement(f in feature_map(), seed in any::<u64>()) {
        let (_, d, h, w) = f.dims4().unwrap();
        let m = h * w;
        let mut perm: Vec<usize> = (0..m).collect();
        let mut state = seed;
        for i in (1..m).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let src = f.data();
        let permuted = Tensor::from_fn(vec![1, d, h, w], |idx| src[(idx / m) * m + perm[idx % m]]);
        for smoothed in [false, true] {
            let a = gram_stat("t", &f, smoothed, 1.0).unwrap();
            let b = gram_stat("t", &permuted, smoothed, 1.0).unwrap();
            prop_assert!((a.max - b.max).abs() <= 1e-12 * (1.0 + a.max.abs()));
            prop_assert!((a.entropy - b.entropy).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_in_unit_interval(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let h = normalized_entropy(&v);
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn entropy_decreases_with_peak_margin(n in 2usize..200, a in 0.0f64..20.0, step in 0.01f64..5.0) {
        let family = |margin: f64| {
            let mut v = vec![0.0; n];
            v[0] = margin;
            normalized_entropy(&v)
        };
        prop_assert!(family(a + step) < family(a));
    }

    #[test]
    fn smoothed_entropy_dominates_low_raw_entropy(f in feature_map(), scale in 5.0f64..200.0) {
        let f = f.map(|v| v * scale);
        let raw = normalized_entropy(f.data());
        prop_assume!(raw < 0.5);
        let smoothed = normalized_entropy(smooth_tensor(&f, 1.0).data());
        prop_assert!(smoothed > raw, "raw {raw} smoothed {smoothed}");
    }

    #[test]
    fn track_mapping_idempotent_and_clamped(len in 1usize..512, coord in 0usize..1024, layer in 1usize..512) {
        if coord < len {
            prop_assert_eq!(map_coordinate(coord, len, len), coord);
        }
        let c = map_coordinate(coord, len, layer);
        prop_assert!(c < layer);
        prop_assert_eq!(map_coordinate(c, layer, layer), c);
    }
}

#[test]
fn constant_map_has_unit_entropies() {
    let f = Tensor::full(vec![1, 4, 3, 3], 2.5f64);
    let a = gram_stat("t", &f, false, 1.0).unwrap();
    assert!((a.entropy - 1.0).abs() < 1e-12);
    assert!((a.max - 2.5 * 2.5 * 9.0).abs() < 1e-9);
}
