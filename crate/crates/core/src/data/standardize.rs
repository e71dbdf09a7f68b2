use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Per-feature affine transform `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; `0` marks a constant feature.
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and population std of every row of `x` (`F x N`).
    pub fn fit(x: &Matrix) -> Self {
        let n = x.cols().max(1) as f64;
        let mut mean = Vec::with_capacity(x.rows());
        let mut std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let first = row.first().copied().unwrap_or(0.0);
            let constant = row.iter().all(|&v| v == first);
            mean.push(mu);
            std.push(if constant { 0.0 } else { var.sqrt() });
        }
        Self { mean, std }
    }

    /// Applies the transform; constant features map to zero.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                x.rows()
            )));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            if self.std[i] == 0.0 {
                0.0
            } else {
                (x.get(i, j) - self.mean[i]) / self.std[i]
            }
        }))
    }
}

/// Z-scores every feature (row) of `x` across samples.
pub fn standardize(x: &Matrix) -> (Matrix, Standardizer) {
    let s = Standardizer::fit(x);
    let out = s.apply(x).expect("fitted on the same matrix");
    (out, s)
}
