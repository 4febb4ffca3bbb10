//! Significance machinery against independent brute-force definitions.

use lrlab_core::stats::{
    benjamini_hochberg, bonferroni, wilcoxon_exact, wilcoxon_normal_approx, wilcoxon_signed_rank, PValueMethod,
    PairedSample,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerates all 2^m sign assignments over quadratic-time mid-ranks.
fn brute_force_wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let m = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << m) {
        let plus: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if plus.min(total - plus) <= w + 1e-9 {
            extreme += 1;
        }
    }
    (w, extreme as f64 / (1u64 << m) as f64)
}

#[test]
fn exact_wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let n = rng.random_range(1..=12);
        // Quantized values produce ties and zero differences.
        let a: Vec<f64> = (0..n).map(|_| (rng.random_range(-8..=8) as f64) / 4.0).collect();
        let b: Vec<f64> = (0..n)
            .map(|i| {
                if rng.random_bool(0.5) {
                    a[i]
                } else {
                    (rng.random_range(-8..=8) as f64) / 4.0
                }
            })
            .collect();
        let paired = PairedSample::new(a, b, "ia", "t").unwrap();
        let result = wilcoxon_signed_rank(&paired);
        let diffs = paired.differences();
        if diffs.iter().all(|&d| d == 0.0) {
            assert_eq!(result.method, PValueMethod::Degenerate);
            assert_eq!(result.p_value, 1.0);
            continue;
        }
        let (w, p) = brute_force_wilcoxon(&diffs);
        assert_eq!(result.method, PValueMethod::Exact);
        assert_eq!(result.statistic, w, "case {case}");
        assert!(
            (result.p_value - p).abs() <= 1e-12,
            "case {case}: {} vs {p}",
            result.p_value
        );
    }
}

#[test]
fn normal_approximation_is_calibrated_for_moderate_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..40 {
        let m = rng.random_range(15..=20);
        let shift = rng.random_range(-0.8..0.8);
        let d: Vec<f64> = (0..m).map(|_| shift + rng.random_range(-1.0..1.0f64)).collect();
        let exact = wilcoxon_exact(&d);
        let approx = wilcoxon_normal_approx(&d);
        assert_eq!(approx.method, PValueMethod::NormalApprox);
        assert!(
            (exact.p_value - approx.p_value).abs() <= 0.02,
            "m={m}: exact {} approx {}",
            exact.p_value,
            approx.p_value
        );
    }
}

#[test]
fn large_samples_use_the_normal_approximation() {
    let d: Vec<f64> = (1..=25)
        .map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 })
        .collect();
    let paired = PairedSample::new(d.clone(), vec![0.0; 25], "ia", "t").unwrap();
    assert_eq!(wilcoxon_signed_rank(&paired).method, PValueMethod::NormalApprox);
}

/// Adjusted p by definition: min over j ≥ i of p_(j)·m/j, capped at 1.
fn bh_by_definition(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted: Vec<(usize, f64)> = p.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut out = vec![0.0; m];
    for i in 0..m {
        let adj = (i..m)
            .map(|j| sorted[j].1 * m as f64 / (j + 1) as f64)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        out[sorted[i].0] = adj;
    }
    out
}

#[test]
fn bh_matches_definition_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let m = rng.random_range(1..=30);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(0.0..0.01)
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let got = benjamini_hochberg(&p, 0.05).unwrap();
        let want = bh_by_definition(&p);
        for (g, w) in got.adjusted.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-15, "{g} vs {w}");
        }
        for (a, r) in got.adjusted.iter().zip(&got.reject) {
            assert_eq!(*r, *a <= 0.05);
        }
    }
}

proptest! {
    #[test]
    fn wilcoxon_is_symmetric(pairs in prop::collection::vec((-5i32..5, -5i32..5), 1..12)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let ab = wilcoxon_signed_rank(&PairedSample::new(a.clone(), b.clone(), "m", "t").unwrap());
        let ba = wilcoxon_signed_rank(&PairedSample::new(b, a, "m", "t").unwrap());
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!(ab.statistic, ba.statistic);
    }

    #[test]
    fn wilcoxon_ignores_common_shift(
        pairs in prop::collection::vec((-20i32..20, -20i32..20), 1..12),
        shift in -100i32..100,
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let base = wilcoxon_signed_rank(&PairedSample::new(a.clone(), b.clone(), "m", "t").unwrap());
        let s = shift as f64;
        let a2 = a.iter().map(|v| v + s).collect();
        let b2 = b.iter().map(|v| v + s).collect();
        let moved = wilcoxon_signed_rank(&PairedSample::new(a2, b2, "m", "t").unwrap());
        prop_assert_eq!(base.statistic, moved.statistic);
        prop_assert_eq!(base.p_value, moved.p_value);
    }

    #[test]
    fn bh_is_monotone_and_dominates_bonferroni(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let bh = benjamini_hochberg(&p, 0.05).unwrap();
        let bf = bonferroni(&p, 0.05).unwrap();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap());
        for w in idx.windows(2) {
            prop_assert!(bh.adjusted[w[0]] <= bh.adjusted[w[1]]);
        }
        for (i, &pi) in p.iter().enumerate() {
            prop_assert!(!bf.reject[i] || bh.reject[i]);
            prop_assert!(bh.adjusted[i] >= pi && bh.adjusted[i] <= 1.0);
        }
    }
}
