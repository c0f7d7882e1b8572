//! Randomized structural invariants of the tensor and windowing algebra.

use proptest::prelude::*;

use pft_ssr::window_attn::{cyclic_shift, window_merge, window_partition};
use pft_ssr::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partition_then_merge_is_identity(
        (b, gh, gw, m, c) in (1usize..3, 1usize..4, 1usize..4, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let (h, w) = (gh * m, gw * m);
        let n = b * h * w * c;
        let data: Vec<f32> = (0..n)
            .map(|i| ((i as u64).wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed) >> 40) as f32 / 1e5)
            .collect();
        let x = Tensor::new(vec![b, h, w, c], data).unwrap();
        let windows = window_partition(&x, m).unwrap();
        let back = window_merge(&windows, m, b, h, w).unwrap();
        prop_assert!(back.bitwise_eq(&x), "round trip changed bits");
    }

    #[test]
    fn shift_then_unshift_is_identity(
        (b, h, w, c) in (1usize..3, 1usize..9, 1usize..9, 1usize..4),
        dy in -12i64..12,
        dx in -12i64..12,
        data_seed in any::<u32>(),
    ) {
        let n = b * h * w * c;
        let data: Vec<f32> = (0..n)
            .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(data_seed)) as f32 / 1e9)
            .collect();
        let x = Tensor::new(vec![b, h, w, c], data).unwrap();
        let back = cyclic_shift(&cyclic_shift(&x, dy, dx).unwrap(), -dy, -dx).unwrap();
        prop_assert!(back.bitwise_eq(&x));
    }

    #[test]
    fn shift_preserves_multiset(
        (b, h, w, c) in (1usize..3, 1usize..7, 1usize..7, 1usize..4),
        dy in -5i64..5,
        dx in -5i64..5,
    ) {
        let n = b * h * w * c;
        let data: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let x = Tensor::new(vec![b, h, w, c], data).unwrap();
        let shifted = cyclic_shift(&x, dy, dx).unwrap();
        let mut a = x.to_vec();
        let mut b2 = shifted.to_vec();
        a.sort_by(f32::total_cmp);
        b2.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b2);
    }

    #[test]
    fn pixel_shuffle_round_trip(
        (b, c, h, w, s) in (1usize..3, 1usize..3, 1usize..4, 1usize..4, 1usize..4),
    ) {
        let cs = c * s * s;
        let n = b * cs * h * w;
        let data: Vec<f32> = (0..n).map(|i| i as f32 * 0.5).collect();
        let x = Tensor::new(vec![b, cs, h, w], data).unwrap();
        let back = x.pixel_shuffle(s).unwrap().pixel_unshuffle(s).unwrap();
        prop_assert!(back.bitwise_eq(&x));
    }

    #[test]
    fn softmax_rows_are_stochastic(
        rows in 1usize..5,
        cols in 1usize..8,
        scale in 0.1f64..100.0,
    ) {
        let n = rows * cols;
        let data: Vec<f64> = (0..n)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) * scale / 8.0)
            .collect();
        let x = Tensor::new(vec![rows, cols], data).unwrap();
        let y = x.softmax(1).unwrap();
        for r in 0..rows {
            let s: f64 = y.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "row {} sums to {}", r, s);
            prop_assert!(y.data()[r * cols..(r + 1) * cols].iter().all(|&v| v >= 0.0));
        }
    }
}
