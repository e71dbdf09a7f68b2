//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use super::Matrix;
use crate::error::{Error, Result};

/// Sweeps stop once the off-diagonal Frobenius norm falls below this
/// fraction of the input's Frobenius norm.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

/// Largest asymmetry accepted before symmetrizing.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let scaled = Matrix::from_fn(n, n, |i, j| v.get(i, j) * self.eigenvalues[j]);
        scaled.matmul_t(v).expect("square factors")
    }
}

/// Sum of squares of the strictly upper triangle, doubled.
fn off_diagonal_sq(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            let x = a[p * n + q];
            s += x * x;
        }
    }
    2.0 * s
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(S + S^T) / 2`. Eigenvalues are returned in
/// ascending order; equal eigenvalues keep the order of the diagonal slot
/// they converged in.
pub fn sym_eigen(s: &Matrix) -> Result<EigenDecomposition> {
    if !s.is_square() {
        return Err(Error::invalid(format!(
            "sym_eigen needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("sym_eigen input".into()));
    }
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_TOLERANCE * s.max_abs().max(1.0) {
        return Err(Error::invalid(format!(
            "sym_eigen input is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let n = s.rows();
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i))).into_vec();
    let mut v = Matrix::identity(n).into_vec();

    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = OFF_DIAGONAL_TOLERANCE * norm;
    let mut converged = norm == 0.0;
    let mut off = off_diagonal_sq(&a, n).sqrt();
    for _ in 0..MAX_SWEEPS {
        if converged || off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, n, p, q, c, sn);
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
        off = off_diagonal_sq(&a, n).sqrt();
    }
    if !converged && off > threshold {
        return Err(Error::Convergence {
            sweeps: MAX_SWEEPS,
            residual: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: ties keep ascending original index.
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Applies the rotation in the (p, q) plane to rows and columns p, q of the
/// symmetric matrix `a`, skipping the 2x2 block itself.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        a[k * n + p] = new_p;
        a[k * n + q] = new_q;
        a[p * n + k] = new_p;
        a[q * n + k] = new_q;
    }
}
