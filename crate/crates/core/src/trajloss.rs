//! Trajectory likelihood: Gaussian NLL of windowed reference statics given
//! windowed predicted statics, under one diagonal covariance shared by all
//! frames.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{build_window_matrix, WindowSet};
use crate::matrix::Matrix;
use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal covariance over `[static, Δ, ΔΔ]` (length `windows * D`),
/// shared by every frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TiedCovariance {
    pub variances: Vec<f64>,
    pub floor: f64,
}

impl TiedCovariance {
    pub fn new(variances: Vec<f64>, floor: f64) -> Result<Self> {
        let cov = Self { variances, floor };
        cov.validate()?;
        Ok(cov)
    }

    /// Unit variances.
    pub fn identity(dim: usize) -> Self {
        Self {
            variances: vec![1.0; dim],
            floor: VARIANCE_FLOOR,
        }
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0) {
            return Err(Error::InvalidCovariance(format!(
                "floor {} must be positive",
                self.floor
            )));
        }
        if let Some((i, v)) = self
            .variances
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < self.floor)
        {
            return Err(Error::InvalidCovariance(format!(
                "variance {v} at dimension {i} is below the floor {}",
                self.floor
            )));
        }
        Ok(())
    }

    /// `½ T Σ_j log(2π σ²_j)`.
    pub fn log_det_term(&self, frames: usize) -> f64 {
        0.5 * frames as f64 * self.variances.iter().map(|v| LN_2PI + libm::log(*v)).sum::<f64>()
    }
}

/// Loss value, gradient w.r.t. the predicted statics, and the windowed
/// residual `ō − Wc` (for covariance re-estimation).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEval {
    pub loss: f64,
    pub gradient: Matrix,
    pub residual: Matrix,
}

fn check(c_pred: &Matrix, target_cols: usize, windows: &WindowSet, cov: &TiedCovariance) -> Result<()> {
    cov.validate()?;
    let expect = windows.len() * c_pred.cols();
    if target_cols != expect || cov.dim() != expect {
        return Err(Error::Shape(format!(
            "{} static dims need {expect} windowed columns and variances, got {target_cols} and {}",
            c_pred.cols(),
            cov.dim()
        )));
    }
    if c_pred.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// NLL and gradient against arbitrary windowed targets `ō` (`T x windows·D`).
pub fn evaluate_against_means(
    c_pred: &Matrix,
    means: &Matrix,
    windows: &WindowSet,
    cov: &TiedCovariance,
) -> Result<TrajectoryEval> {
    check(c_pred, means.cols(), windows, cov)?;
    if means.rows() != c_pred.rows() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} target frames",
            c_pred.rows(),
            means.rows()
        )));
    }
    let w = build_window_matrix(c_pred.rows(), c_pred.cols(), windows)?;
    let o = w.multiply(c_pred)?;
    let mut residual = means.clone();
    let mut weighted = Matrix::zeros(o.rows(), o.cols());
    let mut quad = 0.0;
    for t in 0..o.rows() {
        let r = residual.row_mut(t);
        let wr = weighted.row_mut(t);
        for j in 0..r.len() {
            r[j] -= o.get(t, j);
            let p = r[j] / cov.variances[j];
            quad += r[j] * p;
            wr[j] = -p;
        }
    }
    let gradient = w.transpose_multiply(&weighted)?;
    Ok(TrajectoryEval {
        loss: 0.5 * quad + cov.log_det_term(o.rows()),
        gradient,
        residual,
    })
}

pub fn evaluate(
    c_pred: &Matrix,
    c_ref: &Matrix,
    windows: &WindowSet,
    cov: &TiedCovariance,
) -> Result<TrajectoryEval> {
    if c_pred.rows() != c_ref.rows() || c_pred.cols() != c_ref.cols() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs reference {}x{}",
            c_pred.rows(),
            c_pred.cols(),
            c_ref.rows(),
            c_ref.cols()
        )));
    }
    check(c_pred, windows.len() * c_ref.cols(), windows, cov)?;
    let w = build_window_matrix(c_ref.rows(), c_ref.cols(), windows)?;
    evaluate_against_means(c_pred, &w.multiply(c_ref)?, windows, cov)
}

pub fn nll(c_pred: &Matrix, c_ref: &Matrix, windows: &WindowSet, cov: &TiedCovariance) -> Result<f64> {
    evaluate(c_pred, c_ref, windows, cov).map(|e| e.loss)
}

/// `∂L/∂c_pred = −Wᵀ Σ⁻¹ (ō − Wc_pred)`.
pub fn nll_gradient(
    c_pred: &Matrix,
    c_ref: &Matrix,
    windows: &WindowSet,
    cov: &TiedCovariance,
) -> Result<Matrix> {
    evaluate(c_pred, c_ref, windows, cov).map(|e| e.gradient)
}

/// Sum of squared windowed residuals per dimension and frame count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualAccumulator {
    pub sum_sq: Vec<f64>,
    pub frames: u64,
}

impl ResidualAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum_sq: vec![0.0; dim],
            frames: 0,
        }
    }

    pub fn add(&mut self, residual: &Matrix) -> Result<()> {
        if residual.cols() != self.sum_sq.len() {
            return Err(Error::Shape(format!(
                "residual has {} columns, accumulator {}",
                residual.cols(),
                self.sum_sq.len()
            )));
        }
        for t in 0..residual.rows() {
            for (s, r) in self.sum_sq.iter_mut().zip(residual.row(t)) {
                *s += r * r;
            }
        }
        self.frames += residual.rows() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &ResidualAccumulator) {
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.frames += other.frames;
    }
}

/// `σ²_j = max(floor, mean squared residual of dimension j)`.
pub fn update_covariance(acc: &ResidualAccumulator, floor: f64) -> Result<TiedCovariance> {
    if acc.frames == 0 {
        return Err(Error::EmptySequence);
    }
    let n = acc.frames as f64;
    TiedCovariance::new(acc.sum_sq.iter().map(|s| (s / n).max(floor)).collect(), floor)
}
