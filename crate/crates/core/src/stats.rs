//! Across-seed aggregation and paired significance testing.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest number of nonzero differences for which the Wilcoxon p value is exact.
pub const EXACT_WILCOXON_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Bessel-corrected; absent for a single value.
    pub std: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Stats("mean of an empty sample".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Ok(MeanStd { mean, std })
}

/// Values of two methods paired by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub metric: String,
    pub task: String,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>, metric: impl Into<String>, task: impl Into<String>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Stats(format!("unpaired samples: {} vs {}", a.len(), b.len())));
        }
        if a.is_empty() {
            return Err(Error::Stats("paired sample needs at least one pair".into()));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Stats("paired sample contains non-finite values".into()));
        }
        Ok(Self {
            a,
            b,
            metric: metric.into(),
            task: task.into(),
        })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)` over mid-ranks.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_nonzero: usize,
    pub method: PValueMethod,
}

impl WilcoxonResult {
    pub fn is_degenerate(&self) -> bool {
        self.method == PValueMethod::Degenerate
    }
}

/// Mid-ranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Nonzero differences, their doubled mid-ranks (integers) and tie group sizes.
struct SignedRanks {
    positive: Vec<bool>,
    doubled: Vec<u64>,
    ties: Vec<usize>,
}

fn signed_ranks(diffs: &[f64]) -> SignedRanks {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = mid_ranks(&abs);
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        ties.push(j);
        i += j;
    }
    SignedRanks {
        positive: nonzero.iter().map(|d| *d > 0.0).collect(),
        doubled: ranks.iter().map(|r| (2.0 * r).round() as u64).collect(),
        ties,
    }
}

fn w_plus_minus(sr: &SignedRanks) -> (u64, u64) {
    let plus: u64 = sr
        .doubled
        .iter()
        .zip(&sr.positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let total: u64 = sr.doubled.iter().sum();
    (plus, total - plus)
}

/// Exact two-sided p: the fraction of the `2^m` equally likely sign
/// assignments whose `min(W+, W−)` is at most the observed one.
fn exact_p(sr: &SignedRanks) -> f64 {
    let total: u64 = sr.doubled.iter().sum();
    let (plus, minus) = w_plus_minus(sr);
    let w = plus.min(minus);
    // counts[s] = number of sign assignments with doubled W+ = s
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &sr.doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| {
            let s = s as u64;
            s.min(total - s) <= w
        })
        .map(|(_, c)| c)
        .sum();
    extreme as f64 / 2f64.powi(sr.doubled.len() as i32)
}

fn normal_p(sr: &SignedRanks) -> f64 {
    let m = sr.doubled.len() as f64;
    let (plus, minus) = w_plus_minus(sr);
    let w = plus.min(minus) as f64 / 2.0;
    let mean = m * (m + 1.0) / 4.0;
    let tie_term: f64 = sr.ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = m * (m + 1.0) * (2.0 * m + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

fn wilcoxon_with(diffs: &[f64], exact_max: usize) -> WilcoxonResult {
    let sr = signed_ranks(diffs);
    let m = sr.doubled.len();
    if m == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_nonzero: 0,
            method: PValueMethod::Degenerate,
        };
    }
    let (plus, minus) = w_plus_minus(&sr);
    let (p_value, method) = if m <= exact_max.min(EXACT_LIMIT) {
        (exact_p(&sr), PValueMethod::Exact)
    } else {
        (normal_p(&sr), PValueMethod::NormalApprox)
    };
    WilcoxonResult {
        statistic: plus.min(minus) as f64 / 2.0,
        p_value,
        n_nonzero: m,
        method,
    }
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped; the p
/// value is exact for up to [`EXACT_WILCOXON_MAX`] remaining pairs.
pub fn wilcoxon_signed_rank(paired: &PairedSample) -> WilcoxonResult {
    wilcoxon_with(&paired.differences(), EXACT_WILCOXON_MAX)
}

/// The normal approximation (tie and continuity corrected) at any size.
pub fn wilcoxon_normal_approx(diffs: &[f64]) -> WilcoxonResult {
    wilcoxon_with(diffs, 0)
}

/// Sign-assignment counts are held in `u64`, which bounds exact enumeration.
const EXACT_LIMIT: usize = 63;

/// The exact p value for up to 63 nonzero pairs (normal approximation
/// beyond); cost grows with `m³`.
pub fn wilcoxon_exact(diffs: &[f64]) -> WilcoxonResult {
    wilcoxon_with(diffs, usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjusted {
    pub adjusted: Vec<f64>,
    pub reject: Vec<bool>,
}

fn check_p(p_values: &[f64]) -> Result<()> {
    match p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::Stats(format!("p value {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Benjamini-Hochberg step-up adjustment at false discovery rate `q`.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Result<Adjusted> {
    check_p(p_values)?;
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * (m as f64 / (pos + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    let reject = adjusted.iter().map(|&a| a <= q).collect();
    Ok(Adjusted { adjusted, reject })
}

/// Bonferroni adjustment at family-wise level `alpha`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<Adjusted> {
    check_p(p_values)?;
    let m = p_values.len() as f64;
    let adjusted: Vec<f64> = p_values.iter().map(|p| (p * m).min(1.0)).collect();
    let reject = adjusted.iter().map(|&a| a <= alpha).collect();
    Ok(Adjusted { adjusted, reject })
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Stats(
            "spearman needs two equal-length samples of size ≥ 2".into(),
        ));
    }
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    pearson(&rx, &ry)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Stats("correlation of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub rho: f64,
    /// One-sided p in the tested direction.
    pub p_value: f64,
}

/// Largest sample for the exact permutation trend test.
pub const EXACT_TREND_MAX: usize = 9;

/// One-sided Spearman trend test by exhaustive permutation of `y`.
///
/// A constant `y` has no trend and yields `p = 1`.
pub fn spearman_trend_test(x: &[f64], y: &[f64], direction: Trend) -> Result<TrendTest> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Stats(
            "trend test needs two equal-length samples of size ≥ 2".into(),
        ));
    }
    if x.len() > EXACT_TREND_MAX {
        return Err(Error::Stats(format!(
            "exact trend test supports at most {EXACT_TREND_MAX} points"
        )));
    }
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let rho = match pearson(&rx, &ry) {
        Ok(r) => r,
        Err(_) => return Ok(TrendTest { rho: 0.0, p_value: 1.0 }),
    };
    let sign = match direction {
        Trend::Increasing => 1.0,
        Trend::Decreasing => -1.0,
    };
    let observed = sign * rho;
    let mut perm = ry.clone();
    let mut hits = 0u64;
    let mut total = 0u64;
    for_each_permutation(&mut perm, &mut |p| {
        total += 1;
        let r = pearson(&rx, p).expect("ranks of a non-constant sample");
        if sign * r >= observed - 1e-12 {
            hits += 1;
        }
    });
    Ok(TrendTest {
        rho,
        p_value: hits as f64 / total as f64,
    })
}

/// Heap's algorithm.
fn for_each_permutation(items: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[3.0]).unwrap(), MeanStd { mean: 3.0, std: None });
        let s = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 1.0).abs() < 1e-15);
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn wilcoxon_identical_is_degenerate() {
        let p = PairedSample::new(vec![1.0, 2.0], vec![1.0, 2.0], "ia", "t1").unwrap();
        let r = wilcoxon_signed_rank(&p);
        assert!(r.is_degenerate());
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_all_positive() {
        let a: Vec<f64> = (1..=6).map(|i| i as f64 * 1.5).collect();
        let b = vec![0.0; 6];
        let r = wilcoxon_signed_rank(&PairedSample::new(a, b, "ia", "t").unwrap());
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.03125);
        assert_eq!(r.method, PValueMethod::Exact);
    }

    #[test]
    fn wilcoxon_shift_by_one_over_ten_seeds() {
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        let r = wilcoxon_signed_rank(&PairedSample::new(a, b, "ia", "t").unwrap());
        assert!((r.p_value - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn mid_ranks_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn paired_sample_rejects_unpaired() {
        assert!(PairedSample::new(vec![1.0], vec![], "ia", "t").is_err());
        assert!(PairedSample::new(vec![], vec![], "ia", "t").is_err());
    }

    #[test]
    fn bh_examples() {
        let r = benjamini_hochberg(&[0.04], 0.05).unwrap();
        assert_eq!(r.adjusted, vec![0.04]);
        assert_eq!(r.reject, vec![true]);
        let r = benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04], 0.05).unwrap();
        for a in &r.adjusted {
            assert!((a - 0.04).abs() < 1e-15);
        }
        let r = benjamini_hochberg(&[1.0, 1.0, 1.0], 0.05).unwrap();
        assert!(r.reject.iter().all(|x| !x));
        assert!(benjamini_hochberg(&[1.5], 0.05).is_err());
    }

    #[test]
    fn bh_restores_original_order() {
        let r = benjamini_hochberg(&[0.04, 0.01, 0.5], 0.05).unwrap();
        assert!((r.adjusted[1] - 0.03).abs() < 1e-15);
        assert!((r.adjusted[0] - 0.06).abs() < 1e-15);
        assert_eq!(r.adjusted[2], 0.5);
    }

    #[test]
    fn spearman_trend() {
        let x = [0.1, 0.3, 0.5, 0.7, 0.9];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        let t = spearman_trend_test(&x, &down, Trend::Decreasing).unwrap();
        assert!((t.rho + 1.0).abs() < 1e-12);
        assert!((t.p_value - 1.0 / 120.0).abs() < 1e-12);
        let t = spearman_trend_test(&x, &down, Trend::Increasing).unwrap();
        assert_eq!(t.p_value, 1.0);
        let flat = spearman_trend_test(&x, &[1.0; 5], Trend::Decreasing).unwrap();
        assert_eq!(flat.p_value, 1.0);
    }
}
