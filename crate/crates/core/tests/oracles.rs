mod common;

use patchsvd::linalg::{svd, Matrix};
use patchsvd::metrics;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn to_matrix(a: &common::Dense) -> Matrix {
    Matrix::from_fn(a.len(), a[0].len(), |r, c| a[r][c])
}

#[test]
fn oracle_agrees_on_known_spectrum() {
    // diag(3, 2, 1) rotated on both sides keeps its singular values.
    let a = vec![
        vec![3.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let s = common::oracle_singular_values(&a);
    for (got, want) in s.iter().zip([3.0, 2.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    let wide = vec![vec![1.0, 1.0, 1.0, 1.0]];
    assert!((common::oracle_singular_values(&wide)[0] - 2.0).abs() < 1e-12);
}

#[test]
fn random_8x6_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(86);
    let a = common::random_dense(&mut rng, 8, 6);
    let f = svd(&to_matrix(&a)).unwrap();
    let oracle = common::oracle_singular_values(&a);
    assert_eq!(f.sigma.len(), 6);
    for (s, o) in f.sigma.iter().zip(&oracle) {
        assert!((s - o).abs() <= 1e-10 * oracle[0], "{s} vs {o}");
    }
    assert!(f.reconstruct().max_abs_diff(&to_matrix(&a)) < 1e-12);
}

#[test]
fn naive_ssim_is_one_on_identity() {
    let mut rng = StdRng::seed_from_u64(3);
    let a: common::Dense = common::random_dense(&mut rng, 16, 16)
        .into_iter()
        .map(|r| r.into_iter().map(|v| (v + 1.0) * 100.0).collect())
        .collect();
    assert!((common::naive_ssim(&a, &a, 255.0) - 1.0).abs() < 1e-12);
    let m = to_matrix(&a);
    assert!((metrics::ssim_plane(&m, &m, 255.0).unwrap() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_match_oracle(m in 1usize..12, n in 1usize..12, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = common::random_dense(&mut rng, m, n);
        let f = svd(&to_matrix(&a)).unwrap();
        let oracle = common::oracle_singular_values(&a);
        for (s, o) in f.sigma.iter().zip(&oracle) {
            prop_assert!((s - o).abs() <= 1e-9 * oracle[0].max(1e-300));
        }
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn ssim_matches_naive_on_rectangles(rows in 11usize..20, cols in 11usize..20, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let scale = |d: common::Dense| -> common::Dense {
            d.into_iter().map(|r| r.into_iter().map(|v| ((v + 1.0) * 127.5).round()).collect()).collect()
        };
        let a = scale(common::random_dense(&mut rng, rows, cols));
        let b = scale(common::random_dense(&mut rng, rows, cols));
        let got = metrics::ssim_plane(&to_matrix(&a), &to_matrix(&b), 255.0).unwrap();
        prop_assert!((got - common::naive_ssim(&a, &b, 255.0)).abs() < 1e-9);
    }
}
