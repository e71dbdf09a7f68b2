//! Dense matrices, seeded randomness and the symmetric eigensolver.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, EigenDecomposition, MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE};
pub use matrix::Matrix;
pub use rng::{lecun_normal_init, SeededRng};

use crate::error::{Error, Result};

/// Orthonormal basis for the column space of a full-column-rank `m x n`
/// matrix (`n <= m`), by modified Gram-Schmidt with one reorthogonalization
/// pass.
pub fn orthonormal_columns(a: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if n > m {
        return Err(Error::invalid(format!(
            "orthonormal_columns: {n} columns exceed {m} rows"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    for j in 0..n {
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[i]).map(|(x, y)| x * y).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= dot * y;
                }
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::invalid("orthonormal_columns: rank-deficient input"));
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Matrix::from_fn(m, n, |i, j| cols[j][i]))
}
