use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{check_dim, Error, Result};
use crate::rng::normal;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        check_dim("matrix data", rows * cols, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn i.i.d. from N(0, scale²).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, scale: S, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| normal::<S, _>(rng) * scale)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<S>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        for c in columns {
            check_dim("matrix column", rows, c.len())?;
        }
        Ok(Self::from_fn(rows, columns.len(), |r, c| columns[c][r]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<S> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · x`
    pub fn matvec(&self, x: &[S]) -> Result<Vec<S>> {
        check_dim("matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[S]) -> Result<Vec<S>> {
        check_dim("transposed matvec", self.rows, y.len())?;
        let mut out = vec![S::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim("matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }

    /// Orthonormalises the columns in place (modified Gram-Schmidt, two passes).
    pub fn orthonormalize_columns(&mut self) -> Result<()> {
        for j in 0..self.cols {
            for _pass in 0..2 {
                for k in 0..j {
                    let proj: S = (0..self.rows).map(|r| self[(r, j)] * self[(r, k)]).sum();
                    for r in 0..self.rows {
                        let v = self[(r, k)];
                        self[(r, j)] -= proj * v;
                    }
                }
            }
            let n = (0..self.rows).map(|r| self[(r, j)].powi(2)).sum::<S>().sqrt();
            if n <= S::epsilon() {
                return Err(Error::Config("columns are linearly dependent".into()));
            }
            for r in 0..self.rows {
                self[(r, j)] /= n;
            }
        }
        Ok(())
    }

    /// Lower-triangular factor `L` with `L Lᵀ = self`, allowing semidefinite input.
    pub fn cholesky_semidefinite(&self) -> Result<Self> {
        check_dim("cholesky", self.rows, self.cols)?;
        let n = self.rows;
        let scale = self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()));
        let tol = S::lit(1e-12) * scale.max(S::one());
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)].powi(2);
            }
            if d < -tol {
                return Err(Error::Config("covariance is not positive semidefinite".into()));
            }
            let d = d.max(S::zero()).sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = if d > S::zero() { s / d } else { S::zero() };
            }
        }
        Ok(l)
    }
}

impl<S> std::ops::Index<(usize, usize)> for DenseMatrix<S> {
    type Output = S;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for DenseMatrix<S> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> Option<S> {
    let na = norm(a);
    let nb = norm(b);
    if na == S::zero() || nb == S::zero() {
        return None;
    }
    let c = dot(a, b) / (na * nb);
    Some(c.max(-S::one()).min(S::one()))
}

/// Solves `A x = b` for square `A` by Gaussian elimination with partial pivoting.
pub fn solve<S: Scalar>(a: &DenseMatrix<S>, b: &[S]) -> Result<Vec<S>> {
    check_dim("solve", a.rows(), a.cols())?;
    check_dim("solve rhs", a.rows(), b.len())?;
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap_or(col);
        if m[(pivot, col)].abs() <= S::epsilon() {
            return Err(Error::Config("singular system".into()));
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= f * v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= m[(r, c)] * x[c];
        }
        x[r] = s / m[(r, r)];
    }
    Ok(x)
}
