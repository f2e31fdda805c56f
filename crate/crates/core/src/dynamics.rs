//! Dynamic-feature windows and the window matrix `W` with `o = W c`.
//!
//! Sequence boundaries use edge replication (`c[-1] := c[0]`,
//! `c[T] := c[T-1]`), so a constant sequence has exactly zero dynamics and
//! the replicated taps fold into the first and last columns of `W`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::mlpg::BandedSpd;
use crate::{Error, Result};

/// A symmetric-support regression window over offsets `-half..=half`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    coeffs: Vec<f64>,
}

impl Window {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len().is_multiple_of(2) {
            return Err(Error::InvalidWindows(format!(
                "window needs an odd tap count, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidWindows("non-finite coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn half_width(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Tap offsets paired with coefficients.
    pub fn taps(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        let h = self.half_width() as isize;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(j, &c)| (j as isize - h, c))
    }
}

/// Static window followed by the dynamic windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    windows: Vec<Window>,
}

impl WindowSet {
    pub fn new(windows: Vec<Window>) -> Result<Self> {
        match windows.first() {
            Some(w) if w.coeffs == [1.0] => Ok(Self { windows }),
            _ => Err(Error::InvalidWindows(
                "window 0 must be the static identity window".into(),
            )),
        }
    }

    /// Static, delta `(-0.5, 0, 0.5)` and delta-delta `(1, -2, 1)`.
    pub fn standard() -> Self {
        Self {
            windows: vec![
                Window { coeffs: vec![1.0] },
                Window {
                    coeffs: vec![-0.5, 0.0, 0.5],
                },
                Window {
                    coeffs: vec![1.0, -2.0, 1.0],
                },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn max_half_width(&self) -> usize {
        self.windows.iter().map(Window::half_width).max().unwrap_or(0)
    }
}

impl Default for WindowSet {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn default_windows() -> WindowSet {
    WindowSet::standard()
}

#[inline]
fn clamp_frame(t: isize, frames: usize) -> usize {
    t.clamp(0, frames as isize - 1) as usize
}

/// `o_t = [c_t, Δc_t, ΔΔc_t, ...]`, shape `T x (windows * D)`.
pub fn apply_windows(c: &Matrix, windows: &WindowSet) -> Result<Matrix> {
    let (t_len, d) = (c.rows(), c.cols());
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    let nw = windows.len();
    let mut o = Matrix::zeros(t_len, nw * d);
    for t in 0..t_len {
        for (wi, w) in windows.windows().iter().enumerate() {
            for (off, coeff) in w.taps() {
                if coeff == 0.0 {
                    continue;
                }
                let src = c.row(clamp_frame(t as isize + off, t_len));
                let dst = &mut o.row_mut(t)[wi * d..(wi + 1) * d];
                for (y, x) in dst.iter_mut().zip(src) {
                    *y += coeff * x;
                }
            }
        }
    }
    Ok(o)
}

/// Banded window matrix.
///
/// Stored per `(frame, window)` row as `2H + 1` coefficients over frames
/// `t - H ..= t + H` (boundary taps already folded), shared by every static
/// dimension. In the full `(T * windows * D) x (T * D)` matrix the bandwidth
/// is therefore at most `D * H`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    frames: usize,
    dim: usize,
    windows: usize,
    half: usize,
    coeffs: Vec<f64>,
}

pub fn build_window_matrix(frames: usize, dim: usize, windows: &WindowSet) -> Result<WindowMatrix> {
    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    let half = windows.max_half_width();
    let width = 2 * half + 1;
    let nw = windows.len();
    let mut coeffs = vec![0.0; frames * nw * width];
    for t in 0..frames {
        for (wi, w) in windows.windows().iter().enumerate() {
            let row = &mut coeffs[(t * nw + wi) * width..(t * nw + wi + 1) * width];
            for (off, c) in w.taps() {
                let src = clamp_frame(t as isize + off, frames);
                row[src + half - t] += c;
            }
        }
    }
    Ok(WindowMatrix {
        frames,
        dim,
        windows: nw,
        half,
        coeffs,
    })
}

impl WindowMatrix {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> usize {
        self.half
    }

    /// Folded taps of row `(t, w)` as `(source frame, coefficient)`.
    fn row_taps(&self, t: usize, w: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let width = 2 * self.half + 1;
        let base = (t * self.windows + w) * width;
        let lo = t as isize - self.half as isize;
        self.coeffs[base..base + width]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(move |(j, &c)| ((lo + j as isize) as usize, c))
    }

    /// `W vec(c)` reshaped to `T x (windows * D)`.
    pub fn multiply(&self, c: &Matrix) -> Result<Matrix> {
        self.check_static(c)?;
        let d = self.dim;
        let mut o = Matrix::zeros(self.frames, self.windows * d);
        for t in 0..self.frames {
            for w in 0..self.windows {
                for (src, coeff) in self.row_taps(t, w) {
                    for k in 0..d {
                        let v = o.get(t, w * d + k) + coeff * c.get(src, k);
                        o.set(t, w * d + k, v);
                    }
                }
            }
        }
        Ok(o)
    }

    /// `Wᵀ vec(o)` reshaped to `T x D`.
    pub fn transpose_multiply(&self, o: &Matrix) -> Result<Matrix> {
        let d = self.dim;
        if o.rows() != self.frames || o.cols() != self.windows * d {
            return Err(Error::Shape(format!(
                "expected {}x{}, got {}x{}",
                self.frames,
                self.windows * d,
                o.rows(),
                o.cols()
            )));
        }
        let mut c = Matrix::zeros(self.frames, d);
        for t in 0..self.frames {
            for w in 0..self.windows {
                for (src, coeff) in self.row_taps(t, w) {
                    for k in 0..d {
                        let v = c.get(src, k) + coeff * o.get(t, w * d + k);
                        c.set(src, k, v);
                    }
                }
            }
        }
        Ok(c)
    }

    /// `Wᵀ diag(p) W` for one static dimension, where `precision(t, w)` is
    /// the inverse variance of row `(t, w)`. Bandwidth `2H`.
    pub fn normal_matrix(&self, mut precision: impl FnMut(usize, usize) -> f64) -> BandedSpd {
        let mut a = BandedSpd::zeros(self.frames, 2 * self.half);
        let mut taps: Vec<(usize, f64)> = Vec::with_capacity(2 * self.half + 1);
        for t in 0..self.frames {
            for w in 0..self.windows {
                let p = precision(t, w);
                taps.clear();
                taps.extend(self.row_taps(t, w));
                for &(i, ci) in &taps {
                    for &(j, cj) in &taps {
                        if j <= i {
                            a.add(i, j, p * ci * cj);
                        }
                    }
                }
            }
        }
        a
    }

    /// Dense materialization with row index `(t * windows + w) * D + k` and
    /// column index `t' * D + k`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut dense = vec![vec![0.0; self.frames * d]; self.frames * self.windows * d];
        for t in 0..self.frames {
            for w in 0..self.windows {
                for (src, coeff) in self.row_taps(t, w) {
                    for k in 0..d {
                        dense[(t * self.windows + w) * d + k][src * d + k] += coeff;
                    }
                }
            }
        }
        dense
    }

    fn check_static(&self, c: &Matrix) -> Result<()> {
        if c.rows() != self.frames || c.cols() != self.dim {
            return Err(Error::Shape(format!(
                "expected {}x{} statics, got {}x{}",
                self.frames,
                self.dim,
                c.rows(),
                c.cols()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use proptest::prelude::*;

    fn seq(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn standard_window_examples() {
        let ws = default_windows();
        let o = apply_windows(&seq(&[0.0, 1.0, 2.0, 3.0]), &ws).unwrap();
        assert_eq!(o.get(1, 1), 1.0);
        let line = apply_windows(&seq(&[1.0, 3.0, 5.0, 7.0, 9.0]), &ws).unwrap();
        for t in 1..4 {
            assert_eq!(line.get(t, 2), 0.0);
        }
        let flat = apply_windows(&seq(&[2.5; 6]), &ws).unwrap();
        for t in 0..6 {
            assert_eq!(flat.get(t, 0), 2.5);
            assert_eq!(flat.get(t, 1), 0.0);
            assert_eq!(flat.get(t, 2), 0.0);
        }
    }

    #[test]
    fn single_frame_has_no_dynamics() {
        let o = apply_windows(&seq(&[4.0]), &default_windows()).unwrap();
        assert_eq!(o.row(0), &[4.0, 0.0, 0.0]);
        let w = build_window_matrix(1, 1, &default_windows()).unwrap();
        assert_eq!(w.to_dense(), vec![vec![1.0], vec![0.0], vec![0.0]]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert_eq!(
            apply_windows(&Matrix::zeros(0, 2), &default_windows()),
            Err(Error::EmptySequence)
        );
    }

    #[test]
    fn invalid_window_sets() {
        assert!(Window::new(vec![1.0, 2.0]).is_err());
        assert!(WindowSet::new(vec![Window::new(vec![0.5]).unwrap()]).is_err());
        assert!(WindowSet::new(vec![]).is_err());
    }

    #[test]
    fn static_window_alone_is_identity() {
        let ws = WindowSet::new(vec![Window::new(vec![1.0]).unwrap()]).unwrap();
        let w = build_window_matrix(3, 1, &ws).unwrap().to_dense();
        for (i, row) in w.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn banded_matches_independent_dense_constructor() {
        let mut r = rng(7);
        for _ in 0..10 {
            let (t, d) = (5, 2);
            let w = build_window_matrix(t, d, &default_windows()).unwrap();
            assert_eq!(w.to_dense(), dense_window_matrix(t, d, &default_window_taps()));
            let c = Matrix::from_vec(t, d, uniform_vec(&mut r, t * d, -1.0, 1.0)).unwrap();
            let direct = apply_windows(&c, &default_windows()).unwrap();
            let dense = dense_mul(&dense_window_matrix(t, d, &default_window_taps()), c.as_slice());
            for (a, b) in direct.as_slice().iter().zip(&dense) {
                assert_close(*a, *b, 1e-12);
            }
        }
    }

    #[test]
    fn transpose_matches_dense() {
        let mut r = rng(3);
        let (t, d) = (6, 2);
        let w = build_window_matrix(t, d, &default_windows()).unwrap();
        let o = Matrix::from_vec(t, 3 * d, uniform_vec(&mut r, 3 * t * d, -1.0, 1.0)).unwrap();
        let got = w.transpose_multiply(&o).unwrap();
        let want = dense_mul(&dense_transpose(&w.to_dense()), o.as_slice());
        for (a, b) in got.as_slice().iter().zip(&want) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn normal_matrix_is_positive_definite() {
        // with the static window present, Wᵀ Σ⁻¹ W has a positive Cholesky
        // factorization for any positive precisions
        let mut r = rng(11);
        for t in 1..20 {
            let w = build_window_matrix(t, 1, &default_windows()).unwrap();
            let p = uniform_vec(&mut r, 3 * t, 0.01, 100.0);
            let mut a = w.normal_matrix(|f, k| p[f * 3 + k]);
            assert!(a.factorize().is_ok());
        }
    }

    proptest! {
        #[test]
        fn apply_equals_matrix_product(t in 1usize..=32, d in 1usize..=8, seed in any::<u64>()) {
            let mut r = rng(seed);
            let c = Matrix::from_vec(t, d, uniform_vec(&mut r, t * d, -10.0, 10.0)).unwrap();
            let ws = default_windows();
            let direct = apply_windows(&c, &ws).unwrap();
            let banded = build_window_matrix(t, d, &ws).unwrap().multiply(&c).unwrap();
            prop_assert!(direct.max_abs_diff(&banded) <= 1e-12);
        }

        #[test]
        fn windows_are_linear(t in 1usize..=16, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut r = rng(seed);
            let c1 = Matrix::from_vec(t, 2, uniform_vec(&mut r, 2 * t, -1.0, 1.0)).unwrap();
            let c2 = Matrix::from_vec(t, 2, uniform_vec(&mut r, 2 * t, -1.0, 1.0)).unwrap();
            let mix: Vec<f64> = c1.as_slice().iter().zip(c2.as_slice()).map(|(x, y)| a * x + b * y).collect();
            let ws = default_windows();
            let lhs = apply_windows(&Matrix::from_vec(t, 2, mix).unwrap(), &ws).unwrap();
            let (o1, o2) = (apply_windows(&c1, &ws).unwrap(), apply_windows(&c2, &ws).unwrap());
            for i in 0..lhs.as_slice().len() {
                let want = a * o1.as_slice()[i] + b * o2.as_slice()[i];
                prop_assert!((lhs.as_slice()[i] - want).abs() <= 1e-12);
            }
        }

        #[test]
        fn gram_matrix_is_symmetric_psd(t in 1usize..=12, seed in any::<u64>()) {
            let w = build_window_matrix(t, 1, &default_windows()).unwrap().to_dense();
            let wt = dense_transpose(&w);
            let gram: Vec<Vec<f64>> = wt.iter().map(|r| dense_mul(&wt, r)).collect();
            let mut r = rng(seed);
            let x = uniform_vec(&mut r, t, -1.0, 1.0);
            let quad: f64 = dense_mul(&gram, &x).iter().zip(&x).map(|(p, q)| p * q).sum();
            prop_assert!(quad >= -1e-12);
            for i in 0..t {
                for j in 0..t {
                    prop_assert!((gram[i][j] - gram[j][i]).abs() <= 1e-12);
                }
            }
        }
    }
}
