//! Metric properties and the eigenvalue-entropy cross-check.

use lrlab_core::metrics::{
    image_alignment, text_alignment, tfr, vendi_score, vendi_score_eigen, MetricMatrix, SimilarityKernel,
};
use lrlab_core::numerics::{cosine, DenseMatrix};
use lrlab_core::rng::normal_vec;
use lrlab_core::stats::spearman;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| normal_vec(rng, dim)).collect()
}

#[test]
fn ia_on_two_by_two_recomputes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_set(&mut rng, 2, 5);
    let r = random_set(&mut rng, 2, 5);
    let by_hand = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let want = (by_hand(&g[0], &r[0]) + by_hand(&g[0], &r[1]) + by_hand(&g[1], &r[0]) + by_hand(&g[1], &r[1])) / 4.0;
    assert!((image_alignment(&g, &r).unwrap().value - want).abs() < 1e-14);
    let p = normal_vec(&mut rng, 5);
    let want_ta = (by_hand(&g[0], &p) + by_hand(&g[1], &p)) / 2.0;
    assert!((text_alignment(&g, &p).unwrap().value - want_ta).abs() < 1e-14);
}

#[test]
fn vendi_zero_kernel_sets_score_n() {
    // Antipodal pairs have kernel 0; n = 2 is the only size where every
    // off-diagonal pair can be antipodal.
    let s = vec![vec![0.3f64, -1.2, 2.0], vec![-0.3, 1.2, -2.0]];
    assert!((vendi_score(&s).unwrap() - 2.0).abs() < 1e-12);
    assert!((vendi_score_eigen(&s).unwrap() - 2.0).abs() < 1e-9);
    for n in [1usize, 3, 7] {
        let same = vec![vec![1.0f64, -2.0]; n];
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_kernel_scores_n() {
    for n in 1..=12 {
        let k = SimilarityKernel::from_matrix(DenseMatrix::<f64>::identity(n)).unwrap();
        assert!((k.vendi_local_density() - n as f64).abs() < 1e-12);
        assert!((k.vendi_eigen() - n as f64).abs() < 1e-9);
    }
    let mut bad = DenseMatrix::<f64>::identity(2);
    bad[(0, 1)] = 0.5;
    assert!(SimilarityKernel::from_matrix(bad).is_err());
}

#[test]
fn duplicating_every_sample_leaves_vendi_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let s = random_set(&mut rng, n, 4);
        let doubled: Vec<Vec<f64>> = s.iter().chain(&s).cloned().collect();
        assert!((vendi_score(&s).unwrap() - vendi_score(&doubled).unwrap()).abs() < 1e-12);
        assert!((vendi_score_eigen(&s).unwrap() - vendi_score_eigen(&doubled).unwrap()).abs() < 1e-9);
    }
}

/// Duplicating the minority point of an unbalanced set balances it and
/// raises both formulations: {a, a, c} -> {a, a, c, c} with c = -a.
#[test]
fn duplicating_one_sample_can_raise_vendi() {
    let a = vec![1.0f64, 0.5];
    let c = vec![-1.0, -0.5];
    let before = vec![a.clone(), a.clone(), c.clone()];
    let after = vec![a.clone(), a, c.clone(), c];
    let expected_before = (-(2.0 * (2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln()) / 3.0).exp();
    assert!((vendi_score(&before).unwrap() - expected_before).abs() < 1e-12);
    assert!((vendi_score(&after).unwrap() - 2.0).abs() < 1e-12);
    assert!(vendi_score_eigen(&after).unwrap() > vendi_score_eigen(&before).unwrap());
}

#[test]
fn local_density_score_tracks_eigen_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut local = Vec::new();
    let mut eigen = Vec::new();
    for _ in 0..100 {
        // Spread varies from tight clusters to isotropic clouds.
        let spread = rng.random_range(0.05..3.0);
        let center = normal_vec::<f64, _>(&mut rng, 6);
        let s: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                center
                    .iter()
                    .zip(normal_vec::<f64, _>(&mut rng, 6))
                    .map(|(c, e)| c + spread * e)
                    .collect()
            })
            .collect();
        local.push(vendi_score(&s).unwrap());
        eigen.push(vendi_score_eigen(&s).unwrap());
    }
    let rho = spearman(&local, &eigen).unwrap();
    assert!(rho > 0.9, "spearman {rho}");
}

#[test]
fn kernel_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let s = random_set(&mut rng, 12, 4);
        let k = SimilarityKernel::from_features(&s).unwrap();
        let n = k.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k.matrix()[(i, j)]);
        let eig = nalgebra::SymmetricEigen::new(m);
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8));
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, dim: usize) -> DenseMatrix<f64> {
    let mut q = DenseMatrix::random_normal(dim, dim, 1.0, rng);
    q.orthonormalize_columns().unwrap();
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_is_rotation_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_set(&mut rng, 4, 5);
        let r = random_set(&mut rng, 3, 5);
        let p = normal_vec::<f64, _>(&mut rng, 5);
        let q = random_rotation(&mut rng, 5);
        let rot = |v: &Vec<f64>| q.matvec(v).unwrap();
        let g2: Vec<_> = g.iter().map(rot).collect();
        let r2: Vec<_> = r.iter().map(rot).collect();
        let ia = image_alignment(&g, &r).unwrap().value;
        let ia2 = image_alignment(&g2, &r2).unwrap().value;
        prop_assert!((ia - ia2).abs() < 1e-12);
        let ta = text_alignment(&g, &p).unwrap().value;
        let ta2 = text_alignment(&g2, &rot(&p)).unwrap().value;
        prop_assert!((ta - ta2).abs() < 1e-12);
    }

    #[test]
    fn vendi_is_bounded_and_permutation_invariant(seed in 0u64..10_000, n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = random_set(&mut rng, n, 4);
        let v = vendi_score(&s).unwrap();
        prop_assert!(v >= 1.0 - 1e-12 && v <= n as f64 + 1e-12);
        s.reverse();
        s.rotate_left(n / 2);
        prop_assert!((vendi_score(&s).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn tfr_scales_linearly(values in prop::collection::vec(-1.0f64..1.0, 10), c in -3.0f64..3.0) {
        let rows: Vec<Vec<f64>> = (0..4).map(|k| values[k * (k + 1) / 2..(k + 1) * (k + 2) / 2].to_vec()).collect();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let a = tfr(&MetricMatrix::from_rows(&rows), 4).unwrap().unwrap();
        let b = tfr(&MetricMatrix::from_rows(&scaled), 4).unwrap().unwrap();
        prop_assert!((b - c * a).abs() < 1e-12);
    }
}

#[test]
fn cosine_is_clamped() {
    let a = [1e-3, 1e-3, 1e-3];
    assert!(cosine(&a, &a).unwrap() <= 1.0);
}
