//! Independent dense oracles shared by the unit tests.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[track_caller]
pub fn assert_close(got: f64, want: f64, tol: f64) {
    assert!(
        libm::fabs(got - want) <= tol,
        "got {got}, want {want} (tol {tol})"
    );
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Dense `rows x cols` row-major matrix product `a * x`.
pub fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn dense_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| libm::fabs(m[i][col]).total_cmp(&libm::fabs(m[j][col])))
            .unwrap();
        m.swap(col, piv);
        for i in col + 1..n {
            let f = m[i][col] / m[col][col];
            for j in col..=n {
                m[i][j] -= f * m[col][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Dense window matrix built straight from the tap definition, with edge
/// replication at the boundaries. Row `(t*nw + w)*d + k`, column `t'*d + k`.
pub fn dense_window_matrix(t: usize, d: usize, windows: &[(i32, Vec<f64>)]) -> Vec<Vec<f64>> {
    let nw = windows.len();
    let mut w = vec![vec![0.0; t * d]; t * nw * d];
    for frame in 0..t {
        for (wi, (first, coeffs)) in windows.iter().enumerate() {
            for (j, &c) in coeffs.iter().enumerate() {
                let src = (frame as i64 + *first as i64 + j as i64).clamp(0, t as i64 - 1) as usize;
                for k in 0..d {
                    w[(frame * nw + wi) * d + k][src * d + k] += c;
                }
            }
        }
    }
    w
}

pub fn default_window_taps() -> Vec<(i32, Vec<f64>)> {
    vec![
        (0, vec![1.0]),
        (-1, vec![-0.5, 0.0, 0.5]),
        (-1, vec![1.0, -2.0, 1.0]),
    ]
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + step;
            let up = f(&xp);
            xp[i] = orig - step;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error `|a-n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| libm::fabs(a - n) / libm::fabs(*a).max(libm::fabs(*n)).max(floor))
        .fold(0.0, f64::max)
}
