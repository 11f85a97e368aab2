use serde::{Deserialize, Serialize};

use super::MannError;
use crate::matrix::Matrix;

/// Per-feature affine map `z = (x - mean) / std` fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Column means and sample standard deviations (denominator `n - 1`).
    pub fn fit(data: &Matrix) -> Result<Self, MannError> {
        let n = data.rows();
        if n < 2 {
            return Err(MannError::TooFewRows(n));
        }
        let mut means = Vec::with_capacity(data.cols());
        let mut stds = Vec::with_capacity(data.cols());
        for j in 0..data.cols() {
            let col = data.column(j);
            let (mean, std) = mean_std(&col);
            if !(std > 0.0) || !std.is_finite() {
                return Err(MannError::ConstantFeature(j));
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Self { means, stds })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            means: vec![0.0; n],
            stds: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn transform_row_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &v), (&m, &s)) in out.iter_mut().zip(x).zip(self.means.iter().zip(&self.stds)) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, data: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for i in 0..data.rows() {
            self.transform_row_into(data.row(i), out.row_mut(i));
        }
        out
    }
}

/// Affine scaling of regression targets, so that the network trains on a unit-variance
/// target and reports outputs in the original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };

    pub fn fit(targets: &[f64]) -> Self {
        let (mean, std) = mean_std(targets);
        if std > 0.0 && std.is_finite() {
            Self { mean, std }
        } else {
            Self { mean, std: 1.0 }
        }
    }
}

impl Default for TargetScale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Arithmetic mean and sample standard deviation (`n - 1`).
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
