//! Alignment, diversity and forgetting metrics.
//!
//! Image alignment (IA) and text alignment (TA) are mean cosine similarities
//! in the frozen feature space. Diversity is a Vendi score: `exp` of the mean
//! log inverse local density, where the local density of a sample is the row
//! mean of the kernel `k(a, b) = (1 + cos(a, b)) / 2`. The eigenvalue-entropy
//! formulation is provided alongside as a reference score.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, norm, DenseMatrix, Scalar};

/// One evaluation cell: a method after learning `tasks_learned` tasks,
/// evaluated on the task at position `eval_task` (both 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub seed: u64,
    pub tasks_learned: usize,
    pub eval_task: usize,
    pub ia: f64,
    pub ta: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentScore<S> {
    pub value: S,
    /// Zero-norm feature vectors left out of the mean.
    pub excluded: usize,
}

fn nonzero<S: Scalar>(features: &[Vec<S>]) -> (Vec<&Vec<S>>, usize) {
    let kept: Vec<&Vec<S>> = features.iter().filter(|f| norm(f) > S::zero()).collect();
    let excluded = features.len() - kept.len();
    (kept, excluded)
}

/// Mean cosine similarity over all (generated, reference) pairs.
pub fn image_alignment<S: Scalar>(generated: &[Vec<S>], reference: &[Vec<S>]) -> Result<AlignmentScore<S>> {
    let (g, ex_g) = nonzero(generated);
    let (r, ex_r) = nonzero(reference);
    if g.is_empty() || r.is_empty() {
        return Err(Error::Metric(
            "image alignment needs nonzero features on both sides".into(),
        ));
    }
    let mut total = S::zero();
    for a in &g {
        for b in &r {
            total += cosine(a, b).expect("nonzero by construction");
        }
    }
    Ok(AlignmentScore {
        value: total / S::lit((g.len() * r.len()) as f64),
        excluded: ex_g + ex_r,
    })
}

/// Mean cosine similarity between each generated feature and the prompt feature.
pub fn text_alignment<S: Scalar>(generated: &[Vec<S>], prompt: &[S]) -> Result<AlignmentScore<S>> {
    if norm(prompt) == S::zero() {
        return Err(Error::Metric("prompt feature has zero norm".into()));
    }
    let (g, excluded) = nonzero(generated);
    if g.is_empty() {
        return Err(Error::Metric("text alignment needs a nonzero generated feature".into()));
    }
    let total: S = g
        .iter()
        .map(|a| cosine(a, prompt).expect("nonzero by construction"))
        .sum();
    Ok(AlignmentScore {
        value: total / S::lit(g.len() as f64),
        excluded,
    })
}

/// Pairwise `(1 + cos) / 2` kernel over nonzero samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityKernel<S> {
    matrix: DenseMatrix<S>,
    pub excluded: usize,
}

impl<S: Scalar> SimilarityKernel<S> {
    pub fn from_features(features: &[Vec<S>]) -> Result<Self> {
        let (kept, excluded) = nonzero(features);
        if kept.is_empty() {
            return Err(Error::Metric("no nonzero samples for the diversity kernel".into()));
        }
        let n = kept.len();
        let half = S::lit(0.5);
        let mut matrix = DenseMatrix::identity(n);
        for i in 0..n {
            for j in i + 1..n {
                let k = half * (S::one() + cosine(kept[i], kept[j]).expect("nonzero"));
                matrix[(i, j)] = k;
                matrix[(j, i)] = k;
            }
        }
        Ok(Self { matrix, excluded })
    }

    /// Wraps a precomputed kernel: symmetric, unit diagonal, entries in `[0, 1]`.
    pub fn from_matrix(matrix: DenseMatrix<S>) -> Result<Self> {
        let n = matrix.rows();
        if n == 0 || matrix.cols() != n {
            return Err(Error::Metric("kernel must be square and nonempty".into()));
        }
        for i in 0..n {
            if matrix[(i, i)] != S::one() {
                return Err(Error::Metric("kernel diagonal must be 1".into()));
            }
            for j in 0..n {
                let v = matrix[(i, j)];
                if !(v >= S::zero() && v <= S::one()) || (v - matrix[(j, i)]).abs() > S::lit(1e-9) {
                    return Err(Error::Metric("kernel must be symmetric with entries in [0, 1]".into()));
                }
            }
        }
        Ok(Self { matrix, excluded: 0 })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self) -> &DenseMatrix<S> {
        &self.matrix
    }

    /// Row means of the kernel.
    pub fn local_densities(&self) -> Vec<S> {
        let n = S::lit(self.len() as f64);
        (0..self.len())
            .map(|i| self.matrix.row(i).iter().copied().sum::<S>() / n)
            .collect()
    }

    /// `exp(mean_i log(1 / d_i))`, in `[1, n]`.
    pub fn vendi_local_density(&self) -> S {
        let d = self.local_densities();
        let n = S::lit(d.len() as f64);
        let mean_log_inv: S = d.iter().map(|&di| -di.ln()).sum::<S>() / n;
        mean_log_inv.exp()
    }

    /// `exp` of the Shannon entropy of the eigenvalues of `K / n`.
    pub fn vendi_eigen(&self) -> f64 {
        let n = self.len();
        let m = DMatrix::from_fn(n, n, |i, j| self.matrix[(i, j)].as_f64() / n as f64);
        let eig = SymmetricEigen::new(m);
        let entropy: f64 = eig.eigenvalues.iter().filter(|&&l| l > 0.0).map(|&l| -l * l.ln()).sum();
        entropy.exp()
    }
}

/// Diversity of a sample set (local-density Vendi score).
pub fn vendi_score<S: Scalar>(features: &[Vec<S>]) -> Result<S> {
    Ok(SimilarityKernel::from_features(features)?.vendi_local_density())
}

/// Eigenvalue-entropy Vendi score of the same kernel.
pub fn vendi_score_eigen<S: Scalar>(features: &[Vec<S>]) -> Result<f64> {
    Ok(SimilarityKernel::from_features(features)?.vendi_eigen())
}

/// Square table `M[k][ℓ]` of a metric after learning `k` tasks, evaluated on
/// task `ℓ`, with 1-based indices and `ℓ ≤ k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    size: usize,
    values: Vec<Option<f64>>,
}

impl MetricMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            values: vec![None; size * size],
        }
    }

    /// Builds a matrix from complete lower-triangular rows `rows[k-1][ℓ-1]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let mut m = Self::new(rows.len());
        for (k, row) in rows.iter().enumerate() {
            for (l, &v) in row.iter().enumerate().take(k + 1) {
                m.set(k + 1, l + 1, v);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set(&mut self, k: usize, l: usize, value: f64) {
        assert!(l >= 1 && l <= k && k <= self.size, "cell ({k}, {l}) out of range");
        self.values[(k - 1) * self.size + (l - 1)] = Some(value);
    }

    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        if l == 0 || l > k || k > self.size {
            return None;
        }
        self.values[(k - 1) * self.size + (l - 1)]
    }
}

/// Task forgetting rate after learning `k` tasks:
/// `(1/(k−1)) Σ_{ℓ<k} (M[ℓ][ℓ] − M[k][ℓ])`.
///
/// `Ok(None)` when `k < 2`; an error when a required cell is missing.
pub fn tfr(matrix: &MetricMatrix, k: usize) -> Result<Option<f64>> {
    if k < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for l in 1..k {
        let learned = matrix
            .get(l, l)
            .ok_or_else(|| Error::Metric(format!("missing cell ({l}, {l})")))?;
        let after = matrix
            .get(k, l)
            .ok_or_else(|| Error::Metric(format!("missing cell ({k}, {l})")))?;
        total += learned - after;
    }
    Ok(Some(total / (k - 1) as f64))
}
