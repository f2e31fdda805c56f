//! Maximum-likelihood parameter generation.
//!
//! Given per-frame Gaussian means and variances over static and dynamic
//! features, [`generate`] returns the static trajectory `c` minimizing
//! `(μ - Wc)ᵀ Σ⁻¹ (μ - Wc)`, i.e. the solution of `Wᵀ Σ⁻¹ W c = Wᵀ Σ⁻¹ μ`.
//! The covariance is diagonal, so each static dimension is an independent
//! banded solve.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{build_window_matrix, WindowSet};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Symmetric positive-definite band matrix, lower band stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i at offsets 0 ..= bw
    data: Vec<f64>,
    factored: bool,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bw: bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
            factored: false,
        }
    }

    /// Build from a dense symmetric matrix, keeping `bandwidth` sub-diagonals.
    pub fn from_dense(a: &[Vec<f64>], bandwidth: usize) -> Self {
        let mut m = Self::zeros(a.len(), bandwidth);
        for i in 0..a.len() {
            for j in i.saturating_sub(bandwidth)..=i {
                m.add(i, j, a[i][j]);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)` of the symmetric matrix (zero outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Accumulate into the lower-triangle entry `(i, j)`, `j <= i`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place banded Cholesky, `A = L Lᵀ`.
    pub fn factorize(&mut self) -> Result<()> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                let klo = j.saturating_sub(bw).max(lo);
                for k in klo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NonPositivePivot { row: i, value: s });
                    }
                    let k = self.idx(i, i);
                    self.data[k] = libm::sqrt(s);
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = s / self.data[self.idx(j, j)];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve with a factor produced by [`BandedSpd::factorize`].
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        debug_assert!(self.factored);
        let bw = self.bw;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * y[k];
            }
            y[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(self.n) {
                s -= self.data[self.idx(k, i)] * y[k];
            }
            y[i] = s / self.data[self.idx(i, i)];
        }
        y
    }
}

/// Solve `A x = b` for a banded SPD `A`.
pub fn solve_banded_spd(matrix: &BandedSpd, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != matrix.size() {
        return Err(Error::Shape(format!(
            "right-hand side of length {} for a {}x{} system",
            rhs.len(),
            matrix.size(),
            matrix.size()
        )));
    }
    let mut l = matrix.clone();
    l.factorize()?;
    Ok(l.solve_factored(rhs))
}

/// Means and diagonal variances over `[static, Δ, ΔΔ, ...]` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSequence {
    pub means: Matrix,
    pub variances: Matrix,
}

impl GaussianSequence {
    pub fn new(means: Matrix, variances: Matrix) -> Result<Self> {
        let seq = Self { means, variances };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let (means, variances) = (&self.means, &self.variances);
        if means.rows() != variances.rows() || means.cols() != variances.cols() {
            return Err(Error::Shape(format!(
                "means {}x{} vs variances {}x{}",
                means.rows(),
                means.cols(),
                variances.rows(),
                variances.cols()
            )));
        }
        for t in 0..variances.rows() {
            for (k, &v) in variances.row(t).iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositiveVariance {
                        frame: t,
                        dim: k,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Same variance vector at every frame.
    pub fn tied(means: Matrix, variances: &[f64]) -> Result<Self> {
        let mut v = Matrix::zeros(means.rows(), variances.len());
        for t in 0..v.rows() {
            v.row_mut(t).copy_from_slice(variances);
        }
        Self::new(means, v)
    }

    pub fn frames(&self) -> usize {
        self.means.rows()
    }
}

/// Smooth static trajectory `T x D` from static+dynamic Gaussians.
pub fn generate(seq: &GaussianSequence, windows: &WindowSet) -> Result<Matrix> {
    let t_len = seq.frames();
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    let nw = windows.len();
    if !seq.means.cols().is_multiple_of(nw) {
        return Err(Error::Shape(format!(
            "{} columns is not a multiple of {nw} windows",
            seq.means.cols()
        )));
    }
    seq.validate()?;
    let d = seq.means.cols() / nw;
    let w = build_window_matrix(t_len, 1, windows)?;
    let mut out = Matrix::zeros(t_len, d);
    for k in 0..d {
        let col = |wi: usize| wi * d + k;
        let mut a = w.normal_matrix(|t, wi| 1.0 / seq.variances.get(t, col(wi)));
        let mut weighted = Matrix::zeros(t_len, nw);
        for t in 0..t_len {
            for wi in 0..nw {
                let c = col(wi);
                weighted.set(t, wi, seq.means.get(t, c) / seq.variances.get(t, c));
            }
        }
        let rhs = w.transpose_multiply(&weighted)?;
        a.factorize()?;
        let x = a.solve_factored(rhs.as_slice());
        for (t, v) in x.into_iter().enumerate() {
            out.set(t, k, v);
        }
    }
    Ok(out)
}
